//! Raster types and deterministic image primitives.
//!
//! Every raster is row-major with `index = y * width + x`. Probability maps
//! hold `f64` values clamped to `[0, 1]`; label maps use `0` for ridge or
//! background pixels and `1..=K` for regions.

mod io;
pub(crate) mod kernel;
mod morph;
mod spectrum;

pub use io::{
    read_gray, read_pgm, read_prob_map, sidecar_path, write_gray_png, write_label_pgm, write_pgm16, write_pgm8,
    write_prob_map, write_rgb_png, MapMetadata, PgmData,
};
pub use kernel::{convolve2d, gaussian_kernel, Kernel2D};
pub use morph::{
    compact_labels, connected_components, dilate, is_simple_ridge_point, thin_ridges, thin_ridges_by_value,
    thin_ridges_restricted, Connectivity,
};
pub use spectrum::{radial_power_spectrum, radial_power_spectrum_with, RadialSpectrum, SpectrumOptions, Window};

use crate::error::{invalid, Result};
use serde::{Deserialize, Serialize};

/// Field of view height in micrometres divided by the default raster height.
pub const DEFAULT_PIXEL_PITCH: f64 = 250.0 / 240.0;
pub const DEFAULT_WIDTH: usize = 528;
pub const DEFAULT_HEIGHT: usize = 240;

/// 8-bit grayscale specular image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image2D {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
    /// Micrometres per pixel (isotropic).
    pub pixel_pitch: f64,
}

impl Image2D {
    pub fn new(width: usize, height: usize, data: Vec<u8>, pixel_pitch: f64) -> Result<Self> {
        if data.len() != width * height {
            return invalid(format!(
                "image data length {} does not match {}x{}",
                data.len(),
                width,
                height
            ));
        }
        if !(pixel_pitch > 0.0) {
            return invalid("pixel pitch must be positive");
        }
        Ok(Self {
            width,
            height,
            data,
            pixel_pitch,
        })
    }

    /// Intensities rescaled from 0..255 to 0..1.
    pub fn to_prob_map(&self) -> ProbMap {
        ProbMap {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| v as f64 / 255.0).collect(),
            pixel_pitch: self.pixel_pitch,
        }
    }
}

/// Per-pixel probability raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
    pub pixel_pitch: f64,
}

impl ProbMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value.clamp(0.0, 1.0); width * height],
            pixel_pitch: DEFAULT_PIXEL_PITCH,
        }
    }

    /// Builds a map from raw values, clamping each into `[0, 1]`.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return invalid(format!(
                "map data length {} does not match {}x{}",
                values.len(),
                width,
                height
            ));
        }
        let data = values
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Ok(Self {
            width,
            height,
            data,
            pixel_pitch: DEFAULT_PIXEL_PITCH,
        })
    }

    pub fn with_pitch(mut self, pixel_pitch: f64) -> Self {
        self.pixel_pitch = pixel_pitch;
        self
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    pub fn same_shape(&self, other: &ProbMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn threshold(&self, t: f64) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| v >= t).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Quantises to 8-bit intensities.
    pub fn to_image(&self) -> Image2D {
        Image2D {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| (v * 255.0).round() as u8).collect(),
            pixel_pitch: self.pixel_pitch,
        }
    }
}

/// Boolean raster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn to_prob_map(&self) -> ProbMap {
        ProbMap {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            pixel_pitch: DEFAULT_PIXEL_PITCH,
        }
    }

    /// Coordinates `(x, y)` of every set pixel in raster order.
    pub fn points(&self) -> Vec<(usize, usize)> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i % self.width, i / self.width))
            .collect()
    }
}

/// Region labels; `0` marks ridge (edge) or background pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u32>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.data[y * self.width + x]
    }

    pub fn num_labels(&self) -> usize {
        self.data.iter().copied().max().unwrap_or(0) as usize
    }

    /// Pixel count per label, indexed by label (entry 0 counts ridge pixels).
    pub fn areas(&self) -> Vec<usize> {
        let mut areas = vec![0usize; self.num_labels() + 1];
        for &l in &self.data {
            areas[l as usize] += 1;
        }
        areas
    }

    pub fn ridge_mask(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&l| l == 0).collect(),
        }
    }

    /// Labels of regions with at least one pixel on the image frame.
    pub fn border_labels(&self) -> Vec<bool> {
        let mut touches = vec![false; self.num_labels() + 1];
        let (w, h) = (self.width, self.height);
        for y in 0..h {
            for x in 0..w {
                if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
                    touches[self.data[y * w + x] as usize] = true;
                }
            }
        }
        touches[0] = false;
        touches
    }
}

/// 8-neighbourhood offsets in clockwise order starting north.
pub(crate) const N8: [(isize, isize); 8] = [
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
];

pub(crate) const N4: [(isize, isize); 4] = [(0, -1), (1, 0), (0, 1), (-1, 0)];

#[inline]
pub(crate) fn offset(x: usize, y: usize, d: (isize, isize), w: usize, h: usize) -> Option<(usize, usize)> {
    let nx = x as isize + d.0;
    let ny = y as isize + d.1;
    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
        None
    } else {
        Some((nx as usize, ny as usize))
    }
}

/// Union-find over `0..n`.
pub(crate) struct DisjointSet(Vec<usize>);

impl DisjointSet {
    pub(crate) fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub(crate) fn find(&mut self, mut a: usize) -> usize {
        while self.0[a] != a {
            self.0[a] = self.0[self.0[a]];
            a = self.0[a];
        }
        a
    }

    /// Joins two sets, keeping the smaller representative.
    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prob_map_clamps_on_construction() {
        let m = ProbMap::from_values(2, 1, vec![-0.5, 1.5]).unwrap();
        assert_eq!(m.data, vec![0.0, 1.0]);
    }

    #[test]
    fn image_rejects_bad_shape_and_pitch() {
        assert!(Image2D::new(2, 2, vec![0; 3], 1.0).is_err());
        assert!(Image2D::new(2, 2, vec![0; 4], 0.0).is_err());
    }

    #[test]
    fn default_pitch_matches_field_of_view() {
        assert!((DEFAULT_PIXEL_PITCH - 1.041_666_7).abs() < 1e-6);
    }
}
