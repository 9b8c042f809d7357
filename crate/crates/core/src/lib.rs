//! Guttae-aware corneal endothelium analysis: raster primitives, synthetic
//! specular mosaics, watershed postprocessing, biomarkers and evaluation.

pub mod biomarkers;
pub mod error;
pub mod evalmetrics;
pub mod imgcore;
pub mod postproc;
pub mod synthgen;

pub use error::{Error, Result};
