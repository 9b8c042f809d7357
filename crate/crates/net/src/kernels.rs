//! Raw convolution and attention kernels on NHWC buffers.
//!
//! Convolutions lower to GEMM through im2col, one image at a time.

use crate::error::{invalid, Result};
use crate::tensor::Tensor4;

/// `c = a·b + beta·c` on row-major buffers; `ta`/`tb` read `a`/`b` transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, beta: f64, c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the m×k, k×n and m×n
    // row-major blocks whose lengths were checked.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// Output size and TF-style SAME padding of a strided convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn same(x: [usize; 4], w: [usize; 4], stride: usize) -> Result<Self> {
        let [_, h, wd, cin] = x;
        let [kh, kw, wcin, cout] = w;
        if wcin != cin {
            return invalid(format!("kernel expects {wcin} input channels, got {cin}"));
        }
        if stride == 0 || kh == 0 || kw == 0 || cout == 0 {
            return invalid("degenerate convolution");
        }
        let oh = h.div_ceil(stride);
        let ow = wd.div_ceil(stride);
        let pad_h = ((oh.max(1) - 1) * stride + kh).saturating_sub(h);
        let pad_w = ((ow.max(1) - 1) * stride + kw).saturating_sub(wd);
        Ok(Self { h, w: wd, cin, cout, kh, kw, stride, oh, ow, pad_top: pad_h / 2, pad_left: pad_w / 2 })
    }

    fn k(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn direct(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }

    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        let k = self.k();
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = &mut col[(oy * self.ow + ox) * k..(oy * self.ow + ox + 1) * k];
                for ky in 0..self.kh {
                    let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
                    for kx in 0..self.kw {
                        let ix = (ox * self.stride + kx) as isize - self.pad_left as isize;
                        let dst = &mut row[(ky * self.kw + kx) * self.cin..(ky * self.kw + kx + 1) * self.cin];
                        if iy < 0 || ix < 0 || iy >= self.h as isize || ix >= self.w as isize {
                            dst.fill(0.0);
                        } else {
                            let src = (iy as usize * self.w + ix as usize) * self.cin;
                            dst.copy_from_slice(&x[src..src + self.cin]);
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], dx: &mut [f64]) {
        let k = self.k();
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = &col[(oy * self.ow + ox) * k..(oy * self.ow + ox + 1) * k];
                for ky in 0..self.kh {
                    let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
                    if iy < 0 || iy >= self.h as isize {
                        continue;
                    }
                    for kx in 0..self.kw {
                        let ix = (ox * self.stride + kx) as isize - self.pad_left as isize;
                        if ix < 0 || ix >= self.w as isize {
                            continue;
                        }
                        let src = &row[(ky * self.kw + kx) * self.cin..(ky * self.kw + kx + 1) * self.cin];
                        let dst = (iy as usize * self.w + ix as usize) * self.cin;
                        for (d, s) in dx[dst..dst + self.cin].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation with HWIO weights `[kh, kw, cin, cout]`, SAME padding.
pub fn conv2d(x: &Tensor4, w: &Tensor4, bias: Option<&[f64]>, stride: usize) -> Result<Tensor4> {
    let g = ConvGeom::same(x.dims, w.dims, stride)?;
    if let Some(b) = bias {
        if b.len() != g.cout {
            return invalid(format!("bias of length {} for {} output channels", b.len(), g.cout));
        }
    }
    let n = x.batch();
    let (pin, pout, k) = (g.h * g.w * g.cin, g.oh * g.ow, g.k());
    let mut y = Tensor4::zeros([n, g.oh, g.ow, g.cout]);
    let mut col = if g.direct() { Vec::new() } else { vec![0.0; pout * k] };
    for b in 0..n {
        let xi = &x.data[b * pin..(b + 1) * pin];
        let yi = &mut y.data[b * pout * g.cout..(b + 1) * pout * g.cout];
        if let Some(bias) = bias {
            for row in yi.chunks_mut(g.cout) {
                row.copy_from_slice(bias);
            }
        }
        let a = if g.direct() {
            xi
        } else {
            g.im2col(xi, &mut col);
            &col
        };
        gemm(pout, k, g.cout, a, false, &w.data, false, 1.0, yi);
    }
    Ok(y)
}

/// Gradients of [`conv2d`]: `(dx, dw, db)`.
pub fn conv2d_backward(x: &Tensor4, w: &Tensor4, dy: &Tensor4, stride: usize) -> Result<(Tensor4, Tensor4, Vec<f64>)> {
    let g = ConvGeom::same(x.dims, w.dims, stride)?;
    let n = x.batch();
    let (pin, pout, k) = (g.h * g.w * g.cin, g.oh * g.ow, g.k());
    let mut dx = Tensor4::zeros(x.dims);
    let mut dw = Tensor4::zeros(w.dims);
    let mut db = vec![0.0; g.cout];
    let mut col = vec![0.0; pout * k];
    for b in 0..n {
        let xi = &x.data[b * pin..(b + 1) * pin];
        let dyi = &dy.data[b * pout * g.cout..(b + 1) * pout * g.cout];
        for row in dyi.chunks(g.cout) {
            for (d, v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        let dxi = &mut dx.data[b * pin..(b + 1) * pin];
        if g.direct() {
            gemm(k, pout, g.cout, xi, true, dyi, false, 1.0, &mut dw.data);
            gemm(pout, g.cout, k, dyi, false, &w.data, true, 1.0, dxi);
        } else {
            g.im2col(xi, &mut col);
            gemm(k, pout, g.cout, &col, true, dyi, false, 1.0, &mut dw.data);
            gemm(pout, g.cout, k, dyi, false, &w.data, true, 0.0, &mut col);
            g.col2im(&col, dxi);
        }
    }
    Ok((dx, dw, db))
}

fn check_transpose(x: &Tensor4, w: &Tensor4) -> Result<(usize, usize)> {
    let [kh, kw, cout, cin] = w.dims;
    if kh != 2 || kw != 2 {
        return invalid("transpose convolution supports 2×2 kernels only");
    }
    if cin != x.channels() {
        return invalid(format!("kernel expects {cin} input channels, got {}", x.channels()));
    }
    Ok((cin, cout))
}

/// 2×2 stride-2 transpose convolution with weights `[2, 2, cout, cin]`.
///
/// With the same weight array this is the adjoint of the 2×2 stride-2
/// [`conv2d`] mapping `cout` channels to `cin`.
pub fn conv_transpose2d(x: &Tensor4, w: &Tensor4, bias: Option<&[f64]>) -> Result<Tensor4> {
    let (cin, cout) = check_transpose(x, w)?;
    if let Some(b) = bias {
        if b.len() != cout {
            return invalid(format!("bias of length {} for {cout} output channels", b.len()));
        }
    }
    let [n, h, wd, _] = x.dims;
    let p = h * wd;
    let mut y = Tensor4::zeros([n, 2 * h, 2 * wd, cout]);
    let mut z = vec![0.0; p * 4 * cout];
    for b in 0..n {
        gemm(p, cin, 4 * cout, &x.data[b * p * cin..(b + 1) * p * cin], false, &w.data, true, 0.0, &mut z);
        for i in 0..h {
            for j in 0..wd {
                let zr = &z[(i * wd + j) * 4 * cout..(i * wd + j + 1) * 4 * cout];
                for d in 0..4 {
                    let base = y.index(b, 2 * i + d / 2, 2 * j + d % 2, 0);
                    let dst = &mut y.data[base..base + cout];
                    for (c, v) in dst.iter_mut().enumerate() {
                        *v = zr[d * cout + c] + bias.map_or(0.0, |bb| bb[c]);
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Gradients of [`conv_transpose2d`]: `(dx, dw, db)`.
pub fn conv_transpose2d_backward(x: &Tensor4, w: &Tensor4, dy: &Tensor4) -> Result<(Tensor4, Tensor4, Vec<f64>)> {
    let (cin, cout) = check_transpose(x, w)?;
    let [n, h, wd, _] = x.dims;
    let p = h * wd;
    let mut dx = Tensor4::zeros(x.dims);
    let mut dw = Tensor4::zeros(w.dims);
    let mut db = vec![0.0; cout];
    let mut dz = vec![0.0; p * 4 * cout];
    for b in 0..n {
        for i in 0..h {
            for j in 0..wd {
                let zr = &mut dz[(i * wd + j) * 4 * cout..(i * wd + j + 1) * 4 * cout];
                for d in 0..4 {
                    let base = dy.index(b, 2 * i + d / 2, 2 * j + d % 2, 0);
                    let src = &dy.data[base..base + cout];
                    zr[d * cout..(d + 1) * cout].copy_from_slice(src);
                    for (g, v) in db.iter_mut().zip(src) {
                        *g += v;
                    }
                }
            }
        }
        let xi = &x.data[b * p * cin..(b + 1) * p * cin];
        gemm(p, 4 * cout, cin, &dz, false, &w.data, false, 0.0, &mut dx.data[b * p * cin..(b + 1) * p * cin]);
        gemm(4 * cout, p, cin, &dz, true, xi, false, 1.0, &mut dw.data);
    }
    Ok((dx, dw, db))
}

/// Row-softmax attention per image over flattened positions.
/// Returns the output and the attention matrices `[n][pq × pk]`.
pub fn attention(q: &Tensor4, k: &Tensor4, v: &Tensor4, scale: f64) -> Result<(Tensor4, Vec<f64>)> {
    let (n, d) = (q.batch(), q.channels());
    if k.batch() != n || v.batch() != n || k.channels() != d || k.plane() != v.plane() {
        return invalid("query, key and value shapes disagree");
    }
    let (pq, pk, dv) = (q.plane(), k.plane(), v.channels());
    let mut out = Tensor4::zeros([n, q.height(), q.width(), dv]);
    let mut probs = vec![0.0; n * pq * pk];
    for b in 0..n {
        let a = &mut probs[b * pq * pk..(b + 1) * pq * pk];
        gemm(pq, d, pk, &q.data[b * pq * d..(b + 1) * pq * d], false, &k.data[b * pk * d..(b + 1) * pk * d], true, 0.0, a);
        for row in a.chunks_mut(pk) {
            let m = row.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s * scale));
            let mut sum = 0.0;
            for s in row.iter_mut() {
                *s = (*s * scale - m).exp();
                sum += *s;
            }
            for s in row.iter_mut() {
                *s /= sum;
            }
        }
        gemm(pq, pk, dv, a, false, &v.data[b * pk * dv..(b + 1) * pk * dv], false, 0.0, &mut out.data[b * pq * dv..(b + 1) * pq * dv]);
    }
    Ok((out, probs))
}

/// Gradients of [`attention`]: `(dq, dk, dv)`.
pub fn attention_backward(
    q: &Tensor4,
    k: &Tensor4,
    v: &Tensor4,
    probs: &[f64],
    dout: &Tensor4,
    scale: f64,
) -> (Tensor4, Tensor4, Tensor4) {
    let (n, d, dvc) = (q.batch(), q.channels(), v.channels());
    let (pq, pk) = (q.plane(), k.plane());
    let mut dq = Tensor4::zeros(q.dims);
    let mut dk = Tensor4::zeros(k.dims);
    let mut dv = Tensor4::zeros(v.dims);
    let mut ds = vec![0.0; pq * pk];
    for b in 0..n {
        let a = &probs[b * pq * pk..(b + 1) * pq * pk];
        let go = &dout.data[b * pq * dvc..(b + 1) * pq * dvc];
        let vb = &v.data[b * pk * dvc..(b + 1) * pk * dvc];
        gemm(pk, pq, dvc, a, true, go, false, 0.0, &mut dv.data[b * pk * dvc..(b + 1) * pk * dvc]);
        gemm(pq, dvc, pk, go, false, vb, true, 0.0, &mut ds);
        for (srow, arow) in ds.chunks_mut(pk).zip(a.chunks(pk)) {
            let inner: f64 = srow.iter().zip(arow).map(|(g, p)| g * p).sum();
            for (g, p) in srow.iter_mut().zip(arow) {
                *g = scale * p * (*g - inner);
            }
        }
        gemm(pq, pk, d, &ds, false, &k.data[b * pk * d..(b + 1) * pk * d], false, 0.0, &mut dq.data[b * pq * d..(b + 1) * pq * d]);
        gemm(pk, pq, d, &ds, true, &q.data[b * pq * d..(b + 1) * pq * d], false, 0.0, &mut dk.data[b * pk * d..(b + 1) * pk * d]);
    }
    (dq, dk, dv)
}
