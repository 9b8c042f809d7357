//! Overlay rendering and the per-cell table of a segmentation.

use super::Segmentation;
use crate::biomarkers::measure_segmentation;
use crate::imgcore::Image2D;
use serde::{Deserialize, Serialize};

const EDGE_RGB: [u8; 3] = [230, 30, 30];
const VERTEX_RGB: [u8; 3] = [250, 230, 30];
const NON_ROI_RGB: [u8; 3] = [40, 70, 200];
const LIGHT_GREEN: [u8; 3] = [120, 230, 120];
const DARK_GREEN: [u8; 3] = [20, 140, 40];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub label: u32,
    pub area_px: usize,
    pub vertices: usize,
    pub neighbors: usize,
    pub mean_body: f64,
}

pub fn cell_table(seg: &Segmentation) -> Vec<CellRow> {
    measure_segmentation(seg)
        .into_iter()
        .map(|m| CellRow {
            label: m.label,
            area_px: m.area_px,
            vertices: m.vertices,
            neighbors: m.neighbors,
            mean_body: m.mean_selector.unwrap_or(0.0),
        })
        .collect()
}

/// RGB overlay: kept cells green (lighter when the mean selector is below
/// 0.75), non-ROI blue, ridges red and vertices yellow, blended over the
/// grayscale image when given.
pub fn render_overlay(seg: &Segmentation, image: Option<&Image2D>) -> Vec<u8> {
    let (w, h) = (seg.labels.width, seg.labels.height);
    let mut rgb = Vec::with_capacity(w * h * 3);
    for i in 0..w * h {
        let gray = image.map(|im| im.data[i]).unwrap_or(0);
        let base = [gray; 3];
        let l = seg.labels.data[i];
        let color = if seg.graph.vertex_at(i).is_some() {
            Some((VERTEX_RGB, 1.0))
        } else if l == 0 {
            Some((EDGE_RGB, 1.0))
        } else if let Some(&mean) = seg.kept.get(&l) {
            Some((if mean < 0.75 { LIGHT_GREEN } else { DARK_GREEN }, 0.45))
        } else if seg.non_roi.data[i] {
            Some((NON_ROI_RGB, 0.45))
        } else {
            None
        };
        let px = match color {
            Some((c, alpha)) => {
                let mix = |a: u8, b: u8| (a as f64 * (1.0 - alpha) + b as f64 * alpha).round() as u8;
                [mix(base[0], c[0]), mix(base[1], c[1]), mix(base[2], c[2])]
            }
            None => base,
        };
        rgb.extend_from_slice(&px);
    }
    rgb
}
