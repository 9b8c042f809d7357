//! Synthetic endothelium mosaics with exact ground truth.
//!
//! A mosaic is a rasterised Voronoi tessellation (optionally Lloyd-relaxed)
//! whose boundaries are thinned to 1-pixel 8-connected ridges. On top of the
//! geometry the module inserts guttae, renders a specular-like image, builds
//! the four network targets and computes the true biomarkers.

mod geometry;
mod guttae;
mod render;
mod targets;

pub use geometry::{generate_mosaic, CellPolygon, Mosaic};
pub use guttae::{apply_guttae, guttae_mask, insert_guttae};
pub use render::{blur_grade, guttae_grade, render_specular, GradedImage};
pub use targets::{edge_target_with_gaps, make_targets, TargetSet};

use crate::biomarkers::{report_from_cells, BiomarkerReport, CellMeasure};
use crate::error::{invalid, Result};
use crate::imgcore::{BinaryMask, LabelMap, ProbMap, DEFAULT_HEIGHT, DEFAULT_PIXEL_PITCH, DEFAULT_WIDTH};
use serde::{Deserialize, Serialize};

/// Seed placement strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    /// Uniform random seeds, Lloyd-relaxed.
    Random,
    /// Regular hexagonal lattice. `spacing` is the distance between lattice
    /// rows, which equals the dominant spatial period of the edge pattern;
    /// neighbouring seeds are `2 * spacing / sqrt(3)` apart.
    Hexagonal { spacing: f64 },
    /// Square lattice with the given seed pitch.
    Square { spacing: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MosaicSpec {
    pub width: usize,
    pub height: usize,
    pub target_cell_count: usize,
    pub lloyd_iterations: usize,
    /// Share of the image area covered by guttae.
    pub guttae_fraction: f64,
    /// Mean gutta radius in pixels.
    pub guttae_size_px: f64,
    pub blur_sigma: f64,
    /// Additive Gaussian noise SD in 8-bit intensity units.
    pub noise_sd: f64,
    pub seed: u64,
    pub pixel_pitch: f64,
    pub layout: Layout,
    /// Voronoi sides shorter than this fraction of the mean cell diameter
    /// (`sqrt` of the mean cell area) collapse into one shared corner.
    pub vertex_merge_fraction: f64,
    /// Cells occluded by guttae above this fraction are discarded.
    pub occlusion_threshold: f64,
}

impl Default for MosaicSpec {
    fn default() -> Self {
        Self {
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            target_cell_count: 300,
            lloyd_iterations: 10,
            guttae_fraction: 0.0,
            guttae_size_px: 8.0,
            blur_sigma: 0.8,
            noise_sd: 6.0,
            seed: 0,
            pixel_pitch: DEFAULT_PIXEL_PITCH,
            layout: Layout::Random,
            vertex_merge_fraction: 0.3,
            occlusion_threshold: 0.3,
        }
    }
}

impl MosaicSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return invalid("mosaic must have non-zero area");
        }
        if self.target_cell_count == 0 {
            return invalid("target_cell_count must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.guttae_fraction) {
            return invalid("guttae_fraction must lie in [0, 1]");
        }
        if !(self.pixel_pitch > 0.0) {
            return invalid("pixel_pitch must be positive");
        }
        if !(0.0..1.0).contains(&self.vertex_merge_fraction) {
            return invalid("vertex_merge_fraction must lie in [0, 1)");
        }
        if self.blur_sigma < 0.0 || self.noise_sd < 0.0 || self.guttae_size_px < 0.0 {
            return invalid("blur, noise and guttae size must be non-negative");
        }
        match self.layout {
            Layout::Hexagonal { spacing } | Layout::Square { spacing } if !(spacing >= 2.0) => {
                invalid("lattice spacing must be at least 2 px")
            }
            _ => Ok(()),
        }
    }
}

/// Annotation state of a region in the gold standard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Full,
    /// Clipped by the image frame or touching it at a corner.
    Partial,
    /// Occluded by guttae (or an unusable raster fragment).
    Discarded,
}

/// A fully visible annotated cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldCell {
    pub id: u32,
    pub area_px: usize,
    /// Polygon corners `(x, y)` in pixel coordinates.
    pub vertices: Vec<(f64, f64)>,
    /// Region ids across each polygon side; `0` for the image frame.
    pub neighbors: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoldStandard {
    /// Ternary raster: 0 body, 0.5 discard, 1 edge.
    pub annotation: ProbMap,
    /// Regions with thinned ridges labelled 0.
    pub regions: LabelMap,
    /// Status per region label (index 0 unused).
    pub status: Vec<CellStatus>,
    /// Vertex lists per region label (index 0 unused), before any guttae.
    pub region_vertices: Vec<Vec<(f64, f64)>>,
    pub region_neighbors: Vec<Vec<u32>>,
    pub guttae: BinaryMask,
    pub cells: Vec<GoldCell>,
    pub pixel_pitch: f64,
}

pub const EDGE: f64 = 1.0;
pub const DISCARD: f64 = 0.5;
pub const BODY: f64 = 0.0;

impl GoldStandard {
    pub fn width(&self) -> usize {
        self.regions.width
    }

    pub fn height(&self) -> usize {
        self.regions.height
    }

    /// Pixels annotated as edge (value 1).
    pub fn edge_mask(&self) -> BinaryMask {
        self.value_mask(EDGE)
    }

    /// Pixels annotated as full-cell body (value 0).
    pub fn body_mask(&self) -> BinaryMask {
        self.value_mask(BODY)
    }

    fn value_mask(&self, v: f64) -> BinaryMask {
        BinaryMask {
            width: self.width(),
            height: self.height(),
            data: self.annotation.data.iter().map(|&a| a == v).collect(),
        }
    }

    /// Rebuilds the annotation raster and cell list from the region statuses.
    pub(crate) fn refresh(&mut self) {
        let (w, h) = (self.width(), self.height());
        let mut ann = vec![BODY; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let l = self.regions.data[i] as usize;
                ann[i] = if l == 0 {
                    ridge_value(&self.regions, &self.status, x, y)
                } else if self.status[l] == CellStatus::Full {
                    BODY
                } else {
                    DISCARD
                };
            }
        }
        self.annotation = ProbMap {
            width: w,
            height: h,
            data: ann,
            pixel_pitch: self.pixel_pitch,
        };
        let areas = self.regions.areas();
        self.cells = (1..self.status.len())
            .filter(|&l| self.status[l] == CellStatus::Full)
            .map(|l| GoldCell {
                id: l as u32,
                area_px: areas.get(l).copied().unwrap_or(0),
                vertices: self.region_vertices[l].clone(),
                neighbors: self.region_neighbors[l].clone(),
            })
            .collect();
    }
}

/// Ridge pixels are edges unless every region pixel around them is discarded.
fn ridge_value(regions: &LabelMap, status: &[CellStatus], x: usize, y: usize) -> f64 {
    let (w, h) = (regions.width, regions.height);
    let mut any = false;
    for &d in &crate::imgcore::N8 {
        if let Some((nx, ny)) = crate::imgcore::offset(x, y, d, w, h) {
            let l = regions.data[ny * w + nx] as usize;
            if l != 0 {
                any = true;
                if status[l] != CellStatus::Discarded {
                    return EDGE;
                }
            }
        }
    }
    if any {
        DISCARD
    } else {
        EDGE
    }
}

/// Ground-truth biomarkers from the gold standard's full cells.
///
/// Areas are region pixel counts (ridge excluded); vertex counts come from
/// the merged polygon corners; a cell is inner when every neighbour across
/// its sides is itself a full cell.
pub fn true_biomarkers(gold: &GoldStandard) -> BiomarkerReport {
    let cells: Vec<CellMeasure> = gold
        .cells
        .iter()
        .map(|c| {
            let inner = c
                .neighbors
                .iter()
                .all(|&n| n != 0 && gold.status[n as usize] == CellStatus::Full);
            let mut distinct = c.neighbors.clone();
            distinct.sort_unstable();
            distinct.dedup();
            CellMeasure {
                label: c.id,
                area_px: c.area_px,
                vertices: c.vertices.len(),
                neighbors: distinct.len(),
                inner,
                mean_selector: None,
            }
        })
        .collect();
    let mut report = report_from_cells(&cells, gold.pixel_pitch);
    report
        .metadata
        .insert("source".into(), "gold standard".into());
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(MosaicSpec::default().validate().is_ok());
        let bad = MosaicSpec {
            width: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = MosaicSpec {
            guttae_fraction: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
