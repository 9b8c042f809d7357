//! Cell-size estimation, perimeter closing and edge smoothing.

use crate::error::{Error, Result};
use crate::imgcore::{convolve2d, gaussian_kernel, radial_power_spectrum, ProbMap};

/// A spectral peak must exceed this multiple of the median magnitude of the
/// searched band.
const PEAK_TO_MEDIAN: f64 = 2.0;

/// Dominant spatial period of the edge map, in pixels.
///
/// The radial Fourier profile is searched for its strongest peak at periods no
/// longer than half the shorter image side; the peak position is refined by
/// parabolic interpolation over its two neighbouring bins.
pub fn estimate_cell_size(edge: &ProbMap) -> Result<f64> {
    let spec = radial_power_spectrum(edge);
    let p = &spec.profile;
    let min_f = 2.0 / edge.width.min(edge.height).max(1) as f64;
    let lo = ((min_f / spec.bin_width).ceil() as usize).max(2);
    let hi = p.len().saturating_sub(2);
    if lo >= hi {
        return Err(Error::NoPeriodicity);
    }
    let mut k = lo;
    for i in lo..=hi {
        if p[i] > p[k] {
            k = i;
        }
    }
    let mut band: Vec<f64> = p[lo..=hi].to_vec();
    band.sort_by(f64::total_cmp);
    let median = band[band.len() / 2];
    if !(p[k] > 1e-9) || p[k] < PEAK_TO_MEDIAN * median || k == lo {
        return Err(Error::NoPeriodicity);
    }
    let (a, b, c) = (p[k - 1], p[k], p[k + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 1e-300 {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let f = (k as f64 + shift) * spec.bin_width;
    Ok(1.0 / f)
}

/// Raises every frame pixel to at least 0.5.
pub fn add_perimeter(edge: &ProbMap) -> ProbMap {
    let mut out = edge.clone();
    let (w, h) = (edge.width, edge.height);
    for y in 0..h {
        for x in 0..w {
            if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
                let i = y * w + x;
                out.data[i] = out.data[i].max(0.5);
            }
        }
    }
    out
}

/// Lower bound on the smoothing SD, in pixels.
pub const MIN_SIGMA: f64 = 0.3;

/// Normalised Gaussian smoothing with `sigma = max(0.3, k_sigma * l)`.
pub fn smooth_edges(edge: &ProbMap, l: f64, k_sigma: f64) -> Result<ProbMap> {
    if !(l > 0.0) {
        return crate::error::invalid(format!("cell size must be positive, got {l}"));
    }
    let sigma = (k_sigma * l).max(MIN_SIGMA);
    let size = 2 * (3.0 * sigma).ceil() as usize + 1;
    let kernel = gaussian_kernel(size, sigma, true)?;
    Ok(convolve2d(edge, &kernel))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map_has_no_periodicity() {
        assert!(matches!(
            estimate_cell_size(&ProbMap::filled(64, 48, 0.4)),
            Err(Error::NoPeriodicity)
        ));
    }

    #[test]
    fn stripe_period_is_recovered() {
        let mut m = ProbMap::zeros(200, 120);
        for y in 0..120 {
            for x in (0..200).step_by(10) {
                m.set(x, y, 1.0);
            }
        }
        let l = estimate_cell_size(&m).unwrap();
        assert!((9.5..=10.5).contains(&l), "l = {l}");
    }

    #[test]
    fn perimeter_is_idempotent_and_keeps_strong_pixels() {
        let mut m = ProbMap::zeros(6, 5);
        m.set(0, 2, 0.9);
        let once = add_perimeter(&m);
        assert_eq!(once.get(0, 2), 0.9);
        assert_eq!(once.get(0, 0), 0.5);
        assert_eq!(once.get(2, 2), 0.0);
        assert_eq!(add_perimeter(&once), once);
    }

    #[test]
    fn tiny_sigma_is_nearly_identity() {
        let mut m = ProbMap::zeros(9, 9);
        m.set(4, 4, 1.0);
        let s = smooth_edges(&m, 1.0, 0.0).unwrap();
        assert!(s.get(4, 4) > 0.98);
        let c = smooth_edges(&ProbMap::filled(9, 9, 0.3), 10.0, 0.2).unwrap();
        assert!(c.data.iter().all(|v| (v - 0.3).abs() < 1e-12));
    }
}
