//! Network targets derived from the gold standard.

use super::geometry::rng_for;
use super::{GoldStandard, BODY, EDGE};
use crate::imgcore::{convolve2d, gaussian_kernel, offset, BinaryMask, ProbMap, N8};
use crate::postproc::extract_graph;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSet {
    pub edge: ProbMap,
    pub body: ProbMap,
    pub blob: ProbMap,
    pub roi: ProbMap,
}

/// Edge, body and blob targets are the 7x7 SD-1 unnormalised Gaussian blur of
/// their rasters (clamped to 1); the ROI target is binary.
pub fn make_targets(gold: &GoldStandard) -> TargetSet {
    let (w, h) = (gold.width(), gold.height());
    let ann = &gold.annotation.data;
    let edge_raster = gold.edge_mask();
    let body_raster = gold.body_mask();

    let mut blob_raster = body_raster.clone();
    let mut roi = body_raster.clone();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if ann[i] != EDGE {
                continue;
            }
            let mut all_body = true;
            let mut any_body = false;
            let mut any_region = false;
            for &d in &N8 {
                if let Some((nx, ny)) = offset(x, y, d, w, h) {
                    let j = ny * w + nx;
                    if gold.regions.data[j] == 0 {
                        continue;
                    }
                    any_region = true;
                    if ann[j] == BODY {
                        any_body = true;
                    } else {
                        all_body = false;
                    }
                }
            }
            blob_raster.data[i] = any_region && all_body;
            roi.data[i] = any_body;
        }
    }

    let blur = |m: &BinaryMask| blur_raster(m, gold.pixel_pitch);
    TargetSet {
        edge: blur(&edge_raster),
        body: blur(&body_raster),
        blob: blur(&blob_raster),
        roi: roi.to_prob_map().with_pitch(gold.pixel_pitch),
    }
}

fn blur_raster(mask: &BinaryMask, pixel_pitch: f64) -> ProbMap {
    let kernel = gaussian_kernel(7, 1.0, false).expect("valid target kernel");
    convolve2d(&mask.to_prob_map().with_pitch(pixel_pitch), &kernel)
}

/// Edge target with gaps: `fraction` of the gold edges (at least one) lose
/// their central `gap_px` pixels before blurring. Edges are the ridge chains
/// between vertices; only chains longer than `gap_px + 2` are eligible.
pub fn edge_target_with_gaps(gold: &GoldStandard, fraction: f64, gap_px: usize, seed: u64) -> ProbMap {
    let graph = extract_graph(&gold.regions, &gold.annotation, 2);
    let eligible: Vec<&[usize]> = graph
        .edges
        .iter()
        .filter(|e| e.pixels.len() > gap_px + 2)
        .map(|e| e.pixels.as_slice())
        .collect();
    let mut raster = gold.edge_mask();
    if !eligible.is_empty() && gap_px > 0 {
        let n = ((fraction * graph.edges.len() as f64).round() as usize).clamp(1, eligible.len());
        let mut rng = rng_for(seed, 4);
        for k in sample(&mut rng, eligible.len(), n) {
            let px = eligible[k];
            let start = (px.len() - gap_px) / 2;
            for &i in &px[start..start + gap_px] {
                raster.data[i] = false;
            }
        }
    }
    blur_raster(&raster, gold.pixel_pitch)
}
