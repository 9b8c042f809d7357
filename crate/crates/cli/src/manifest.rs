//! Run and dataset manifests.

use crate::config::RunConfig;
use crate::error::{input, runtime, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const RUN_MANIFEST: &str = "manifest.json";
pub const DATASET_MANIFEST: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_unix: f64,
    pub seconds: f64,
}

/// Per-item fault that did not abort the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub id: String,
    pub error: String,
}

/// One per artifact-producing run, written last into the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, String>,
    /// Paths relative to the output directory, sorted.
    pub outputs: Vec<String>,
    #[serde(default)]
    pub failures: Vec<Failure>,
    #[serde(default)]
    pub unmatched: Vec<String>,
    #[serde(default)]
    pub notes: Vec<String>,
    pub timing: Timing,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        let started = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        let mut seeds = BTreeMap::new();
        seeds.insert("run".to_string(), config.seed);
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            seeds,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            failures: Vec::new(),
            unmatched: Vec::new(),
            notes: Vec::new(),
            timing: Timing { started_unix: started, seconds: 0.0 },
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.inputs.insert(name.to_string(), path.display().to_string());
    }

    pub fn output(&mut self, rel: impl Into<String>) {
        self.outputs.push(rel.into());
    }

    pub fn write(mut self, out: &Path, started: std::time::Instant) -> Result<Self> {
        self.outputs.sort();
        self.timing.seconds = started.elapsed().as_secs_f64();
        write_json(&out.join(RUN_MANIFEST), &self)?;
        Ok(self)
    }
}

/// Ground truth of one synthetic image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    pub seed: u64,
    pub image: String,
    /// Role name to target path.
    pub targets: BTreeMap<String, String>,
    pub annotation: String,
    pub truth: String,
    pub cells: String,
    pub guttae_fraction: f64,
    pub blur_sigma: f64,
    pub guttae_grade: u8,
    pub blur_grade: u8,
    pub total_grade: u8,
    pub n_cells: usize,
    pub ecd: Option<f64>,
    pub cv: Option<f64>,
    pub hex_vertex: Option<f64>,
    pub hex_neighbor: Option<f64>,
}

/// Paths are relative to the dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub width: usize,
    pub height: usize,
    pub pixel_pitch: f64,
    pub entries: Vec<DatasetEntry>,
}

impl DatasetManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(DATASET_MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", path.display())))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(runtime)? + "\n";
    std::fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}
