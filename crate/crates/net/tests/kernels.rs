use endoseg_net::kernels::{conv2d, conv_transpose2d};
use endoseg_net::Tensor4;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Nested-loop cross-correlation with TF SAME padding.
fn brute_conv(x: &Tensor4, w: &Tensor4, b: &[f64], stride: usize) -> Tensor4 {
    let [n, h, wd, cin] = x.dims;
    let [kh, kw, _, cout] = w.dims;
    let (oh, ow) = (h.div_ceil(stride), wd.div_ceil(stride));
    let pt = (((oh - 1) * stride + kh).saturating_sub(h)) / 2;
    let pl = (((ow - 1) * stride + kw).saturating_sub(wd)) / 2;
    let mut y = Tensor4::zeros([n, oh, ow, cout]);
    for bi in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..cout {
                    let mut s = b[co];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pt as isize;
                            let ix = (ox * stride + kx) as isize - pl as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                s += x.at(bi, iy as usize, ix as usize, ci) * w.at(ky, kx, ci, co);
                            }
                        }
                    }
                    y.set(bi, oy, ox, co, s);
                }
            }
        }
    }
    y
}

fn assert_close(a: &Tensor4, b: &Tensor4, rel: f64) {
    assert_eq!(a.dims, b.dims);
    for (x, y) in a.data.iter().zip(&b.data) {
        assert!((x - y).abs() <= rel * (1.0 + x.abs().max(y.abs())), "{x} vs {y}");
    }
}

#[test]
fn identity_kernel_passes_input_through() {
    let x = Tensor4::randn([2, 5, 4, 1], &mut rng(1));
    let w = Tensor4::filled([1, 1, 1, 1], 1.0);
    assert_eq!(conv2d(&x, &w, Some(&[0.0]), 1).unwrap(), x);
}

#[test]
fn zero_kernel_gives_the_bias() {
    let x = Tensor4::randn([1, 4, 4, 3], &mut rng(2));
    let w = Tensor4::zeros([3, 3, 3, 2]);
    let y = conv2d(&x, &w, Some(&[0.5, -2.0]), 1).unwrap();
    assert!(y.data.chunks(2).all(|c| c == [0.5, -2.0]));
}

#[test]
fn convolution_matches_nested_loops() {
    let x = Tensor4::randn([1, 5, 6, 4], &mut rng(3));
    let w = Tensor4::randn([3, 3, 4, 3], &mut rng(4));
    let b = [0.1, -0.2, 0.3];
    assert_close(&conv2d(&x, &w, Some(&b), 1).unwrap(), &brute_conv(&x, &w, &b, 1), 1e-12);
    let w2 = Tensor4::randn([2, 2, 4, 3], &mut rng(5));
    let y = conv2d(&x, &w2, Some(&b), 2).unwrap();
    assert_eq!(y.dims, [1, 3, 3, 3]);
    assert_close(&y, &brute_conv(&x, &w2, &b, 2), 1e-12);
    let w1 = Tensor4::randn([1, 1, 4, 2], &mut rng(6));
    assert_close(&conv2d(&x, &w1, Some(&b[..2]), 1).unwrap(), &brute_conv(&x, &w1, &b[..2], 1), 1e-12);
}

#[test]
fn mismatched_channels_are_rejected() {
    let x = Tensor4::zeros([1, 4, 4, 3]);
    assert!(conv2d(&x, &Tensor4::zeros([3, 3, 2, 2]), None, 1).is_err());
    assert!(conv_transpose2d(&x, &Tensor4::zeros([2, 2, 2, 2]), None).is_err());
}

#[test]
fn transpose_of_an_impulse_is_the_kernel_stamp() {
    let mut x = Tensor4::zeros([1, 3, 3, 1]);
    x.set(0, 1, 2, 0, 1.0);
    let w = Tensor4::from_vec([2, 2, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let y = conv_transpose2d(&x, &w, Some(&[0.0])).unwrap();
    assert_eq!(y.dims, [1, 6, 6, 1]);
    for yy in 0..6 {
        for xx in 0..6 {
            let expected = match (yy, xx) {
                (2, 4) => 1.0,
                (2, 5) => 2.0,
                (3, 4) => 3.0,
                (3, 5) => 4.0,
                _ => 0.0,
            };
            assert_eq!(y.at(0, yy, xx, 0), expected);
        }
    }
}

#[test]
fn transpose_of_zero_is_the_bias() {
    let w = Tensor4::randn([2, 2, 2, 3], &mut rng(7));
    let y = conv_transpose2d(&Tensor4::zeros([1, 2, 2, 3]), &w, Some(&[1.5, -1.0])).unwrap();
    assert!(y.data.chunks(2).all(|c| c == [1.5, -1.0]));
}

#[test]
fn transpose_is_the_adjoint_of_strided_convolution() {
    for seed in 0..5 {
        let mut r = rng(100 + seed);
        let (ci, co) = (3, 4);
        let w = Tensor4::randn([2, 2, ci, co], &mut r);
        let x = Tensor4::randn([2, 6, 8, ci], &mut r);
        let y = Tensor4::randn([2, 3, 4, co], &mut r);
        let lhs = conv2d(&x, &w, None, 2).unwrap().dot(&y);
        let rhs = x.dot(&conv_transpose2d(&y, &w, None).unwrap());
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn convolution_matches_nested_loops_on_random_shapes(
        h in 1usize..8,
        w in 1usize..8,
        cin in 1usize..4,
        cout in 1usize..4,
        k in 1usize..4,
        stride in 1usize..3,
        seed in 0u64..1000,
    ) {
        let x = Tensor4::randn([2, h, w, cin], &mut rng(seed));
        let kern = Tensor4::randn([k, k, cin, cout], &mut rng(seed + 1));
        let b: Vec<f64> = (0..cout).map(|i| i as f64 * 0.25 - 0.3).collect();
        let fast = conv2d(&x, &kern, Some(&b), stride).unwrap();
        let slow = brute_conv(&x, &kern, &b, stride);
        prop_assert_eq!(fast.dims, slow.dims);
        for (a, c) in fast.data.iter().zip(&slow.data) {
            prop_assert!((a - c).abs() <= 1e-12 * (1.0 + a.abs().max(c.abs())));
        }
    }
}
