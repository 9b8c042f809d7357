//! Guttae: dark elliptical droplets that hide cells.

use super::geometry::rng_for;
use super::{CellStatus, GoldStandard, MosaicSpec};
use crate::imgcore::BinaryMask;
use rand::Rng;

/// Random union of ellipses covering about `guttae_fraction` of the image.
pub fn guttae_mask(spec: &MosaicSpec) -> BinaryMask {
    let (w, h) = (spec.width, spec.height);
    let mut mask = BinaryMask::new(w, h);
    if spec.guttae_fraction <= 0.0 || spec.guttae_size_px <= 0.0 {
        return mask;
    }
    let mut rng = rng_for(spec.seed, 2);
    let goal = (spec.guttae_fraction * (w * h) as f64).round() as usize;
    let mut covered = 0usize;
    let max_drops = 100_000;
    for _ in 0..max_drops {
        if covered >= goal {
            break;
        }
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        let a = spec.guttae_size_px * rng.random_range(0.7..1.3);
        let b = a * rng.random_range(0.6..1.0);
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let (s, c) = theta.sin_cos();
        let x0 = (cx - a).floor().max(0.0) as usize;
        let x1 = ((cx + a).ceil() as usize).min(w - 1);
        let y0 = (cy - a).floor().max(0.0) as usize;
        let y1 = ((cy + a).ceil() as usize).min(h - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let u = (dx * c + dy * s) / a;
                let v = (-dx * s + dy * c) / b;
                if u * u + v * v <= 1.0 && !mask.get(x, y) {
                    mask.set(x, y, true);
                    covered += 1;
                }
            }
        }
    }
    mask
}

/// Inserts random guttae according to `spec`; identity when the fraction is 0.
pub fn insert_guttae(gold: &GoldStandard, spec: &MosaicSpec) -> GoldStandard {
    if spec.guttae_fraction <= 0.0 {
        return gold.clone();
    }
    apply_guttae(gold, &guttae_mask(spec), spec.occlusion_threshold)
}

/// Marks every region occluded by more than `threshold` of its area as
/// discarded. Edges between discarded regions become discard area too; the
/// remaining edges stay annotated.
pub fn apply_guttae(gold: &GoldStandard, mask: &BinaryMask, threshold: f64) -> GoldStandard {
    let mut out = gold.clone();
    for (g, &m) in out.guttae.data.iter_mut().zip(&mask.data) {
        *g |= m;
    }
    let k = out.status.len() - 1;
    let mut area = vec![0usize; k + 1];
    let mut hidden = vec![0usize; k + 1];
    for (i, &l) in out.regions.data.iter().enumerate() {
        area[l as usize] += 1;
        if out.guttae.data[i] {
            hidden[l as usize] += 1;
        }
    }
    for l in 1..=k {
        if area[l] > 0 && hidden[l] as f64 > threshold * area[l] as f64 {
            out.status[l] = CellStatus::Discarded;
        }
    }
    out.refresh();
    out
}
