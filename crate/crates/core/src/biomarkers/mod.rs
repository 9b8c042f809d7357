//! Endothelial biomarkers: cell density (ECD), polymegethism (CV) and
//! hexagonality (HEX, by vertices and by neighbours).

use crate::postproc::{CellGraph, Segmentation};
use crate::imgcore::LabelMap;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Per-cell geometry used to build a report.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMeasure {
    pub label: u32,
    pub area_px: usize,
    pub vertices: usize,
    pub neighbors: usize,
    /// All neighbours are themselves measured cells.
    pub inner: bool,
    pub mean_selector: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub label: u32,
    pub area_px: usize,
    pub area_um2: f64,
    pub vertices: usize,
    pub neighbors: usize,
    pub inner: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_selector: Option<f64>,
}

/// Biomarker estimates. A report with `n_cells == 0` is the empty-report
/// marker; individual fields are `None` when undefined (e.g. CV of one cell).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerReport {
    pub n_cells: usize,
    /// cells / mm²
    pub ecd: Option<f64>,
    /// percent
    pub cv: Option<f64>,
    /// percent of cells with exactly six vertices
    pub hex_vertex: Option<f64>,
    /// percent of inner cells with exactly six neighbours
    pub hex_neighbor: Option<f64>,
    pub n_inner: usize,
    /// µm per pixel
    pub pixel_pitch: f64,
    pub per_cell: Vec<CellRecord>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl BiomarkerReport {
    pub fn empty(pixel_pitch: f64) -> Self {
        report_from_cells(&[], pixel_pitch)
    }

    pub fn is_empty(&self) -> bool {
        self.n_cells == 0
    }
}

/// `n / Σ area` in cells per mm²; `None` without cells.
pub fn compute_ecd(areas_px: &[f64], pixel_pitch: f64) -> Option<f64> {
    if areas_px.is_empty() {
        return None;
    }
    let mm_per_px = pixel_pitch * 1e-3;
    let total: f64 = areas_px.iter().sum::<f64>() * mm_per_px * mm_per_px;
    (total > 0.0).then(|| areas_px.len() as f64 / total)
}

/// `100 * sample SD / mean` of the areas; `None` with fewer than two cells.
pub fn compute_cv(areas: &[f64]) -> Option<f64> {
    let n = areas.len();
    if n < 2 {
        return None;
    }
    let mean = areas.iter().sum::<f64>() / n as f64;
    if mean <= 0.0 {
        return None;
    }
    let var = areas.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Some(100.0 * var.sqrt() / mean)
}

/// Percentage of cells with exactly six vertices.
pub fn compute_hex_vertex(vertex_counts: &[usize]) -> Option<f64> {
    hex_share(vertex_counts.iter().copied())
}

fn hex_share(counts: impl Iterator<Item = usize>) -> Option<f64> {
    let (mut n, mut six) = (0usize, 0usize);
    for c in counts {
        n += 1;
        six += (c == 6) as usize;
    }
    (n > 0).then(|| 100.0 * six as f64 / n as f64)
}

/// Percentage of inner kept cells (all edge-neighbours kept) that have
/// exactly six neighbours.
pub fn compute_hex_neighbor(seg: &Segmentation) -> Option<f64> {
    let measures = measure_segmentation(seg);
    hex_share(measures.iter().filter(|m| m.inner).map(|m| m.neighbors))
}

/// Distinct graph vertices 8-adjacent to each region (index 0 unused).
pub fn assign_vertices_to_cells(graph: &CellGraph, labels: &LabelMap) -> Vec<usize> {
    graph
        .vertices_per_region(labels)
        .iter()
        .map(|v| v.len())
        .collect()
}

/// Measures every kept cell of a segmentation.
pub fn measure_segmentation(seg: &Segmentation) -> Vec<CellMeasure> {
    let areas = seg.labels.areas();
    let vertices = assign_vertices_to_cells(&seg.graph, &seg.labels);
    let neighbors = seg.graph.neighbors_per_region();
    seg.kept
        .iter()
        .map(|(&l, &mean)| {
            let nb = neighbors.get(l as usize).cloned().unwrap_or_default();
            CellMeasure {
                label: l,
                area_px: areas.get(l as usize).copied().unwrap_or(0),
                vertices: vertices.get(l as usize).copied().unwrap_or(0),
                neighbors: nb.len(),
                inner: !nb.is_empty() && nb.iter().all(|n| seg.kept.contains_key(n)),
                mean_selector: Some(mean),
            }
        })
        .collect()
}

pub fn report_from_segmentation(seg: &Segmentation) -> BiomarkerReport {
    report_from_cells(&measure_segmentation(seg), seg.pixel_pitch)
}

pub fn report_from_cells(cells: &[CellMeasure], pixel_pitch: f64) -> BiomarkerReport {
    let areas: Vec<f64> = cells.iter().map(|c| c.area_px as f64).collect();
    let counts: Vec<usize> = cells.iter().map(|c| c.vertices).collect();
    let um2 = pixel_pitch * pixel_pitch;
    let mut metadata = BTreeMap::new();
    metadata.insert("cv_sd".into(), "sample (n-1)".into());
    metadata.insert("area".into(), "region pixels, ridge excluded".into());
    BiomarkerReport {
        n_cells: cells.len(),
        ecd: compute_ecd(&areas, pixel_pitch),
        cv: compute_cv(&areas),
        hex_vertex: compute_hex_vertex(&counts),
        hex_neighbor: hex_share(cells.iter().filter(|c| c.inner).map(|c| c.neighbors)),
        n_inner: cells.iter().filter(|c| c.inner).count(),
        pixel_pitch,
        per_cell: cells
            .iter()
            .map(|c| CellRecord {
                label: c.label,
                area_px: c.area_px,
                area_um2: c.area_px as f64 * um2,
                vertices: c.vertices,
                neighbors: c.neighbors,
                inner: c.inner,
                mean_selector: c.mean_selector,
            })
            .collect(),
        metadata,
    }
}
