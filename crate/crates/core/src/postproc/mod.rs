//! From an edge map and a selector map (body, blob or ROI) to a refined cell
//! segmentation: size estimation, perimeter, smoothing, watershed, cell graph,
//! weak-edge pruning and superpixel selection.

mod graph;
mod overlay;
mod size;
mod watershed;

pub use graph::{extract_graph, prune_weak_edges, CellGraph, GraphEdge, GraphVertex};
pub use overlay::{cell_table, render_overlay, CellRow};
pub use size::{add_perimeter, estimate_cell_size, smooth_edges, MIN_SIGMA};
pub use watershed::watershed;

use crate::biomarkers::{report_from_segmentation, BiomarkerReport};
use crate::error::{invalid, Result};
use crate::imgcore::{BinaryMask, LabelMap, ProbMap};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Body,
    Blob,
    Roi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub k_sigma: f64,
    pub edge_threshold: f64,
    pub body_threshold: f64,
    pub roi_area_fraction: f64,
    pub selection_mode: SelectionMode,
    pub min_edge_length: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k_sigma: 0.2,
            edge_threshold: 0.1,
            body_threshold: 0.5,
            roi_area_fraction: 0.85,
            selection_mode: SelectionMode::Body,
            min_edge_length: 2,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("edge_threshold", self.edge_threshold),
            ("body_threshold", self.body_threshold),
            ("roi_area_fraction", self.roi_area_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return invalid(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.k_sigma >= 0.0) {
            return invalid("k_sigma must be non-negative");
        }
        if self.min_edge_length < 1 {
            return invalid("min_edge_length must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub labels: LabelMap,
    pub graph: CellGraph,
    /// Kept superpixels with their mean selector intensity.
    pub kept: BTreeMap<u32, f64>,
    pub non_roi: BinaryMask,
    pub pixel_pitch: f64,
}

/// Drops superpixels touching the image frame, then keeps those passing the
/// mode's rule: mean selector strictly above `body_threshold` (body, blob) or
/// at least `roi_area_fraction` of pixels with selector >= 0.5 (ROI).
pub fn filter_superpixels(
    labels: &LabelMap,
    graph: &CellGraph,
    selector: &ProbMap,
    config: &PipelineConfig,
) -> Result<Segmentation> {
    if labels.width != selector.width || labels.height != selector.height {
        return Err(crate::Error::ShapeMismatch(format!(
            "labels {}x{} vs selector {}x{}",
            labels.width, labels.height, selector.width, selector.height
        )));
    }
    let k = labels.num_labels();
    let border = labels.border_labels();
    let mut sum = vec![0.0; k + 1];
    let mut inside = vec![0usize; k + 1];
    let mut area = vec![0usize; k + 1];
    for (i, &l) in labels.data.iter().enumerate() {
        let v = selector.data[i];
        sum[l as usize] += v;
        area[l as usize] += 1;
        if v >= 0.5 {
            inside[l as usize] += 1;
        }
    }
    let mut kept = BTreeMap::new();
    for l in 1..=k {
        if border[l] || area[l] == 0 {
            continue;
        }
        let mean = sum[l] / area[l] as f64;
        let pass = match config.selection_mode {
            SelectionMode::Body | SelectionMode::Blob => mean > config.body_threshold,
            SelectionMode::Roi => inside[l] as f64 >= config.roi_area_fraction * area[l] as f64,
        };
        if pass {
            kept.insert(l as u32, mean);
        }
    }
    let non_roi = non_roi_mask(labels, &kept);
    Ok(Segmentation {
        labels: labels.clone(),
        graph: graph.clone(),
        kept,
        non_roi,
        pixel_pitch: selector.pixel_pitch,
    })
}

/// Pixels of rejected superpixels plus ridge pixels with no kept neighbour.
fn non_roi_mask(labels: &LabelMap, kept: &BTreeMap<u32, f64>) -> BinaryMask {
    let (w, h) = (labels.width, labels.height);
    let mut m = BinaryMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let l = labels.data[i];
            m.data[i] = if l != 0 {
                !kept.contains_key(&l)
            } else {
                !crate::imgcore::N8.iter().any(|&d| {
                    crate::imgcore::offset(x, y, d, w, h)
                        .is_some_and(|(nx, ny)| kept.contains_key(&labels.data[ny * w + nx]))
                })
            };
        }
    }
    m
}

/// Steps I to VII composed: returns the refined segmentation and its report.
pub fn run_pipeline(
    edge: &ProbMap,
    selector: &ProbMap,
    config: &PipelineConfig,
) -> Result<(Segmentation, BiomarkerReport)> {
    config.validate()?;
    if !edge.same_shape(selector) {
        return Err(crate::Error::ShapeMismatch("edge and selector maps differ in shape".into()));
    }
    let l = estimate_cell_size(edge)?;
    let closed = add_perimeter(edge);
    let smooth = smooth_edges(&closed, l, config.k_sigma)?;
    let labels = watershed(&smooth);
    let graph = extract_graph(&labels, edge, config.min_edge_length);
    let first = filter_superpixels(&labels, &graph, selector, config)?;
    let (graph, labels) = prune_weak_edges(
        &graph,
        &labels,
        edge,
        config.edge_threshold,
        &first.non_roi,
        config.min_edge_length,
    );
    let mut seg = filter_superpixels(&labels, &graph, selector, config)?;
    seg.pixel_pitch = edge.pixel_pitch;
    let mut report = report_from_segmentation(&seg);
    report
        .metadata
        .insert("cell_size_px".into(), format!("{l:.4}"));
    report
        .metadata
        .insert("selection_mode".into(), format!("{:?}", config.selection_mode).to_lowercase());
    Ok((seg, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_labels() -> LabelMap {
        // 3x3 grid of 4x4 cells separated by 1-px ridges
        let (w, h) = (14, 14);
        let mut l = LabelMap::new(w, h);
        for y in 0..h {
            for x in 0..w {
                if x % 5 == 4 || y % 5 == 4 {
                    continue;
                }
                l.data[y * w + x] = (y / 5 * 3 + x / 5 + 1) as u32;
            }
        }
        l
    }

    #[test]
    fn selector_extremes() {
        let l = grid_labels();
        let g = extract_graph(&l, &ProbMap::filled(14, 14, 1.0), 2);
        let cfg = PipelineConfig::default();
        let all = filter_superpixels(&l, &g, &ProbMap::filled(14, 14, 1.0), &cfg).unwrap();
        assert_eq!(all.kept.keys().copied().collect::<Vec<_>>(), vec![5]);
        let none = filter_superpixels(&l, &g, &ProbMap::zeros(14, 14), &cfg).unwrap();
        assert!(none.kept.is_empty());
    }

    #[test]
    fn mean_exactly_at_threshold_is_rejected() {
        let l = grid_labels();
        let g = extract_graph(&l, &ProbMap::filled(14, 14, 1.0), 2);
        let seg = filter_superpixels(&l, &g, &ProbMap::filled(14, 14, 0.5), &PipelineConfig::default()).unwrap();
        assert!(seg.kept.is_empty());
    }

    #[test]
    fn roi_rule_uses_area_fraction() {
        let l = grid_labels();
        let g = extract_graph(&l, &ProbMap::filled(14, 14, 1.0), 2);
        let cfg = PipelineConfig {
            selection_mode: SelectionMode::Roi,
            ..Default::default()
        };
        let mut sel = ProbMap::filled(14, 14, 1.0);
        // 2 of 16 pixels of the centre cell outside: 87.5 % inside
        sel.set(5, 5, 0.0);
        sel.set(6, 5, 0.0);
        assert!(filter_superpixels(&l, &g, &sel, &cfg).unwrap().kept.contains_key(&5));
        sel.set(7, 5, 0.0);
        assert!(!filter_superpixels(&l, &g, &sel, &cfg).unwrap().kept.contains_key(&5));
    }
}
