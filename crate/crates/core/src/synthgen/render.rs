//! Specular-like rendering and image grading.

use super::geometry::rng_for;
use super::{GoldStandard, MosaicSpec};
use crate::imgcore::{gaussian_kernel, kernel::convolve_values, Image2D};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

const BODY_LEVEL: f64 = 165.0;
const BODY_SPREAD: f64 = 12.0;
const EDGE_LEVEL: f64 = 70.0;
const GUTTA_LEVEL: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradedImage {
    pub image: Image2D,
    pub guttae_grade: u8,
    pub blur_grade: u8,
    pub total_grade: u8,
}

/// 1 below 2 % coverage, 2 up to 8 %, 3 above.
pub fn guttae_grade(fraction: f64) -> u8 {
    if fraction < 0.02 {
        1
    } else if fraction <= 0.08 {
        2
    } else {
        3
    }
}

/// 1 below 1 px, 2 up to 2.5 px, 3 above.
pub fn blur_grade(sigma: f64) -> u8 {
    if sigma < 1.0 {
        1
    } else if sigma <= 2.5 {
        2
    } else {
        3
    }
}

/// Bright cell bodies, dark 1-px borders and near-black guttae, then blur and
/// additive noise.
pub fn render_specular(gold: &GoldStandard, spec: &MosaicSpec) -> GradedImage {
    let (w, h) = (gold.width(), gold.height());
    let mut rng = rng_for(spec.seed, 3);
    let levels = Normal::new(BODY_LEVEL, BODY_SPREAD).expect("valid normal");
    let cell_level: Vec<f64> = (0..gold.status.len())
        .map(|_| levels.sample(&mut rng).clamp(100.0, 230.0))
        .collect();
    let mut raw: Vec<f64> = gold
        .regions
        .data
        .iter()
        .zip(&gold.guttae.data)
        .map(|(&l, &g)| {
            if g {
                GUTTA_LEVEL
            } else if l == 0 {
                EDGE_LEVEL
            } else {
                cell_level[l as usize]
            }
        })
        .collect();
    if spec.blur_sigma > 0.0 {
        let size = 2 * (3.0 * spec.blur_sigma).ceil() as usize + 1;
        let k = gaussian_kernel(size, spec.blur_sigma, true).expect("valid blur kernel");
        raw = convolve_values(w, h, &raw, &k);
    }
    if spec.noise_sd > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sd).expect("valid normal");
        for v in raw.iter_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    let data = raw.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    let gg = guttae_grade(spec.guttae_fraction);
    let bg = blur_grade(spec.blur_sigma);
    GradedImage {
        image: Image2D {
            width: w,
            height: h,
            data,
            pixel_pitch: gold.pixel_pitch,
        },
        guttae_grade: gg,
        blur_grade: bg,
        total_grade: gg + bg,
    }
}
