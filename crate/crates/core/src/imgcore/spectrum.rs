//! Radially averaged Fourier magnitude profile.

use super::ProbMap;
use rustfft::{num_complex::Complex, FftPlanner};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hann,
    Rect,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumOptions {
    pub window: Window,
    /// Zero-pad to the next power of two at least twice the larger side.
    pub zero_pad: bool,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self {
            window: Window::Hann,
            zero_pad: true,
        }
    }
}

/// Mean Fourier magnitude per frequency annulus.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialSpectrum {
    /// Width of one annulus in cycles per pixel.
    pub bin_width: f64,
    /// `profile[k]` is the mean magnitude at radius `k * bin_width`;
    /// `profile[0]` excludes the DC coefficient and is always zero.
    pub profile: Vec<f64>,
    /// Magnitude of the DC coefficient of the (windowed) input.
    pub dc: f64,
}

impl RadialSpectrum {
    pub fn frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_width
    }
}

pub fn radial_power_spectrum(map: &ProbMap) -> RadialSpectrum {
    radial_power_spectrum_with(map, SpectrumOptions::default())
}

pub fn radial_power_spectrum_with(map: &ProbMap, opts: SpectrumOptions) -> RadialSpectrum {
    let (w, h) = (map.width, map.height);
    let wx = window(w, opts.window);
    let wy = window(h, opts.window);
    let mean = map.mean();
    let wsum: f64 = wx.iter().sum::<f64>() * wy.iter().sum::<f64>();

    let (nw, nh) = if opts.zero_pad {
        let n = (2 * w.max(h)).next_power_of_two();
        (n, n)
    } else {
        (w, h)
    };
    let mut buf = vec![Complex::new(0.0, 0.0); nw * nh];
    for y in 0..h {
        for x in 0..w {
            buf[y * nw + x].re = (map.data[y * w + x] - mean) * wx[x] * wy[y];
        }
    }
    fft2(&mut buf, nw, nh);

    let bin_width = 1.0 / nw.max(nh) as f64;
    let max_bin = (0.5f64.hypot(0.5) / bin_width).ceil() as usize + 1;
    let mut sums = vec![0.0; max_bin + 1];
    let mut counts = vec![0usize; max_bin + 1];
    for v in 0..nh {
        let fy = signed_freq(v, nh);
        for u in 0..nw {
            if u == 0 && v == 0 {
                continue;
            }
            let fx = signed_freq(u, nw);
            let bin = (fx.hypot(fy) / bin_width).round() as usize;
            sums[bin] += buf[v * nw + u].norm();
            counts[bin] += 1;
        }
    }
    let mut profile: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    profile[0] = 0.0;
    while profile.len() > 1 && counts[profile.len() - 1] == 0 {
        profile.pop();
    }
    RadialSpectrum {
        bin_width,
        profile,
        dc: (mean * wsum).abs(),
    }
}

fn signed_freq(k: usize, n: usize) -> f64 {
    let k = if k > n / 2 { k as f64 - n as f64 } else { k as f64 };
    k / n as f64
}

fn window(n: usize, kind: Window) -> Vec<f64> {
    match kind {
        Window::Rect => vec![1.0; n],
        Window::Hann if n > 1 => (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
            .collect(),
        Window::Hann => vec![1.0; n],
    }
}

fn fft2(buf: &mut [Complex<f64>], w: usize, h: usize) {
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft_forward(w);
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(h);
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
}
