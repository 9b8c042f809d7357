use super::ProbMap;
use crate::error::{invalid, Result};

/// Square, odd-sized convolution kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2D {
    pub size: usize,
    pub data: Vec<f64>,
    /// 1-D factor when the kernel is the outer product of a vector with itself.
    separable: Option<Vec<f64>>,
}

impl Kernel2D {
    pub fn new(size: usize, data: Vec<f64>) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return invalid(format!("kernel size must be odd and positive, got {size}"));
        }
        if data.len() != size * size {
            return invalid("kernel data length must be size*size");
        }
        Ok(Self {
            size,
            data,
            separable: None,
        })
    }

    #[inline]
    pub fn at(&self, dx: isize, dy: isize) -> f64 {
        let r = (self.size / 2) as isize;
        self.data[((dy + r) as usize) * self.size + (dx + r) as usize]
    }

    pub fn center(&self) -> f64 {
        self.at(0, 0)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Isotropic Gaussian kernel sampled at integer offsets.
///
/// Unnormalised kernels have `exp(0) = 1` at the centre; normalised kernels
/// sum to one.
pub fn gaussian_kernel(size: usize, sigma: f64, normalized: bool) -> Result<Kernel2D> {
    if size == 0 || size % 2 == 0 {
        return invalid(format!("kernel size must be odd and positive, got {size}"));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return invalid(format!("sigma must be positive, got {sigma}"));
    }
    let r = (size / 2) as isize;
    let mut line: Vec<f64> = (-r..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    if normalized {
        let s: f64 = line.iter().sum();
        line.iter_mut().for_each(|v| *v /= s);
    }
    let mut data = Vec::with_capacity(size * size);
    for a in &line {
        for b in &line {
            data.push(a * b);
        }
    }
    Ok(Kernel2D {
        size,
        data,
        separable: Some(line),
    })
}

/// Convolution with replicate padding; the result is clamped to `[0, 1]`.
pub fn convolve2d(input: &ProbMap, kernel: &Kernel2D) -> ProbMap {
    let data = convolve_values(input.width, input.height, &input.data, kernel);
    ProbMap {
        width: input.width,
        height: input.height,
        data: data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        pixel_pitch: input.pixel_pitch,
    }
}

/// Unclamped replicate-padded convolution of a raw raster.
pub(crate) fn convolve_values(w: usize, h: usize, values: &[f64], kernel: &Kernel2D) -> Vec<f64> {
    let r = (kernel.size / 2) as isize;
    let clamp_x = |x: isize| x.clamp(0, w as isize - 1) as usize;
    let clamp_y = |y: isize| y.clamp(0, h as isize - 1) as usize;
    if let Some(line) = &kernel.separable {
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            let row = &values[y * w..(y + 1) * w];
            for x in 0..w {
                let mut acc = 0.0;
                for (k, kv) in line.iter().enumerate() {
                    acc += kv * row[clamp_x(x as isize + k as isize - r)];
                }
                tmp[y * w + x] = acc;
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for (k, kv) in line.iter().enumerate() {
                let sy = clamp_y(y as isize + k as isize - r);
                let src = &tmp[sy * w..(sy + 1) * w];
                let dst = &mut out[y * w..(y + 1) * w];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += kv * s;
                }
            }
        }
        return out;
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in -r..=r {
                let sy = clamp_y(y as isize + dy);
                for dx in -r..=r {
                    let sx = clamp_x(x as isize + dx);
                    acc += kernel.at(dx, dy) * values[sy * w + sx];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}
