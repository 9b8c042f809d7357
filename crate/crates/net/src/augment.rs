//! Label-preserving augmentation applied identically to images and targets.

use endoseg_core::imgcore::ProbMap;
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub fn flip_lr(m: &ProbMap) -> ProbMap {
    let mut out = m.clone();
    for y in 0..m.height {
        for x in 0..m.width {
            out.set(x, y, m.get(m.width - 1 - x, y));
        }
    }
    out
}

pub fn flip_ud(m: &ProbMap) -> ProbMap {
    let mut out = m.clone();
    for y in 0..m.height {
        out.data[y * m.width..(y + 1) * m.width].copy_from_slice(&m.data[(m.height - 1 - y) * m.width..(m.height - y) * m.width]);
    }
    out
}

/// Control-point displacements (pixels) on a `grid × grid` lattice spanning
/// the image corner to corner.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub grid: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

impl DisplacementField {
    pub fn zero(grid: usize) -> Self {
        Self { grid, dx: vec![0.0; grid * grid], dy: vec![0.0; grid * grid] }
    }

    pub fn random<R: Rng + ?Sized>(grid: usize, sd: f64, rng: &mut R) -> Self {
        let n = Normal::new(0.0, sd.max(0.0)).expect("finite sd");
        let dx = (0..grid * grid).map(|_| n.sample(rng)).collect();
        let dy = (0..grid * grid).map(|_| n.sample(rng)).collect();
        Self { grid, dx, dy }
    }

    /// Displacement at pixel `(x, y)` of a `w × h` image.
    fn at(&self, x: usize, y: usize, w: usize, h: usize) -> (f64, f64) {
        if self.grid < 2 {
            return (self.dx.first().copied().unwrap_or(0.0), self.dy.first().copied().unwrap_or(0.0));
        }
        let g = self.grid;
        let u = x as f64 * (g - 1) as f64 / (w.max(2) - 1) as f64;
        let v = y as f64 * (g - 1) as f64 / (h.max(2) - 1) as f64;
        let (i0, j0) = ((u.floor() as usize).min(g - 2), (v.floor() as usize).min(g - 2));
        let (fu, fv) = (u - i0 as f64, v - j0 as f64);
        let lerp = |f: &[f64]| {
            let a = f[j0 * g + i0] * (1.0 - fu) + f[j0 * g + i0 + 1] * fu;
            let b = f[(j0 + 1) * g + i0] * (1.0 - fu) + f[(j0 + 1) * g + i0 + 1] * fu;
            a * (1.0 - fv) + b * fv
        };
        (lerp(&self.dx), lerp(&self.dy))
    }
}

/// Bilinear sample with replicated borders.
pub fn sample_bilinear(m: &ProbMap, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (m.width - 1) as f64);
    let y = y.clamp(0.0, (m.height - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(m.width - 1), (y0 + 1).min(m.height - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = m.get(x0, y0) * (1.0 - fx) + m.get(x1, y0) * fx;
    let bottom = m.get(x0, y1) * (1.0 - fx) + m.get(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Warps `m` by pulling each pixel from its displaced position.
pub fn elastic(m: &ProbMap, field: &DisplacementField) -> ProbMap {
    let mut out = m.clone();
    for y in 0..m.height {
        for x in 0..m.width {
            let (dx, dy) = field.at(x, y, m.width, m.height);
            out.set(x, y, sample_bilinear(m, x as f64 + dx, y as f64 + dy));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp() -> ProbMap {
        ProbMap::from_values(7, 5, (0..35).map(|i| (i * 13 % 17) as f64 / 17.0).collect()).unwrap()
    }

    #[test]
    fn flips_are_involutions() {
        let m = ramp();
        assert_eq!(flip_lr(&flip_lr(&m)), m);
        assert_eq!(flip_ud(&flip_ud(&m)), m);
        assert_ne!(flip_lr(&m), m);
        assert_eq!(flip_lr(&m).get(0, 2), m.get(6, 2));
    }

    #[test]
    fn zero_field_is_identity() {
        let m = ramp();
        assert_eq!(elastic(&m, &DisplacementField::zero(4)), m);
    }

    #[test]
    fn constant_shift_moves_content() {
        let m = ramp();
        let mut f = DisplacementField::zero(4);
        f.dx.iter_mut().for_each(|d| *d = 1.0);
        let w = elastic(&m, &f);
        assert_eq!(w.get(2, 3), m.get(3, 3));
        assert_eq!(w.get(6, 3), m.get(6, 3));
    }

    #[test]
    fn random_field_is_seeded() {
        let a = DisplacementField::random(4, 6.0, &mut ChaCha8Rng::seed_from_u64(1));
        let b = DisplacementField::random(4, 6.0, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        assert_eq!(a.dx.len(), 16);
    }
}
