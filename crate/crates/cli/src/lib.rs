//! The `endoseg` command line: synthetic data generation, training,
//! inference, postprocessing and cohort evaluation, each writing a run
//! manifest next to its artifacts.

pub mod cli;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod generate;
pub mod infer;
pub mod manifest;
pub mod pool;
pub mod postprocess;
pub mod train;

pub use config::RunConfig;
pub use error::{CliError, Result};
pub use manifest::{DatasetManifest, RunManifest};
