//! The run configuration file (TOML).
//!
//! Every section is optional; missing keys take their defaults.
//!
//! ```toml
//! seed = 7
//! workers = 2
//!
//! [generate]
//! count = 30
//! guttae_fractions = [0.0, 0.04]   # cycled over images; empty = mosaic value
//! blur_sigmas = []                 # cycled over images; empty = mosaic value
//! [generate.mosaic]                # synthetic mosaic parameters
//! width = 96
//! height = 96
//! target_cell_count = 22
//!
//! [net]                            # architecture
//! resolution_stages = 3
//! blocks_per_stage = [2, 3, 4]
//! growth_rate = 3
//! attention = "none"               # none | fnla_mul | fnla_add | fnla_concat | snla_only
//!
//! [train]                          # epochs and lr_decay default per role
//! batch_size = 15
//!
//! [pipeline]                       # postprocessing
//! k_sigma = 0.2
//! selection_mode = "body"
//! ```

use crate::error::{input, Result};
use endoseg_core::postproc::PipelineConfig;
use endoseg_core::synthgen::MosaicSpec;
use endoseg_net::train::{Role, TrainConfig};
use endoseg_net::NetConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub generate: GenerateConfig,
    pub net: NetConfig,
    pub train: TrainSection,
    pub pipeline: PipelineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            generate: GenerateConfig::default(),
            net: NetConfig::toy(endoseg_net::AttentionKind::None),
            train: TrainSection::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub count: usize,
    pub mosaic: MosaicSpec,
    pub guttae_fractions: Vec<f64>,
    pub blur_sigmas: Vec<f64>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { count: 30, mosaic: MosaicSpec::default(), guttae_fractions: Vec::new(), blur_sigmas: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub lr_decay: Option<f64>,
    pub initial_lr: f64,
    pub batch_size: usize,
    pub guttae_per_level: usize,
    pub flips: bool,
    pub elastic_probability: f64,
    pub elastic_grid: usize,
    pub elastic_sd: f64,
    pub steps_per_epoch: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::for_role(Role::Edge);
        Self {
            epochs: None,
            lr_decay: None,
            initial_lr: t.initial_lr,
            batch_size: t.batch_size,
            guttae_per_level: t.guttae_per_level,
            flips: t.flips,
            elastic_probability: t.elastic_probability,
            elastic_grid: t.elastic_grid,
            elastic_sd: t.elastic_sd,
            steps_per_epoch: None,
        }
    }
}

impl TrainSection {
    pub fn resolve(&self, role: Role, seed: u64) -> TrainConfig {
        TrainConfig {
            role,
            initial_lr: self.initial_lr,
            lr_decay: self.lr_decay.unwrap_or(role.default_lr_decay()),
            epochs: self.epochs.unwrap_or(role.default_epochs()),
            batch_size: self.batch_size,
            guttae_per_level: self.guttae_per_level,
            flips: self.flips,
            elastic_probability: self.elastic_probability,
            elastic_grid: self.elastic_grid,
            elastic_sd: self.elastic_sd,
            steps_per_epoch: self.steps_per_epoch,
            seed,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| input(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.generate.mosaic.validate().map_err(input)?;
        self.net.validate().map_err(input)?;
        self.pipeline.validate().map_err(input)?;
        self.train.resolve(Role::Edge, self.seed).validate().map_err(input)?;
        if self.workers == 0 {
            return Err(input("workers must be at least 1"));
        }
        if self.generate.guttae_fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(input("guttae_fractions must lie in [0, 1]"));
        }
        if self.generate.blur_sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err(input("blur_sigmas must be non-negative"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use endoseg_core::postproc::SelectionMode;
    use endoseg_core::synthgen::Layout;

    #[test]
    fn documented_example_parses() {
        let cfg = RunConfig::parse(
            r#"
seed = 7
workers = 2
[generate]
count = 30
guttae_fractions = [0.0, 0.04]
blur_sigmas = []
[generate.mosaic]
width = 96
height = 96
target_cell_count = 22
noise_sd = 6.0
layout = { kind = "hexagonal", spacing = 12.0 }
[net]
resolution_stages = 3
blocks_per_stage = [2, 3, 4]
growth_rate = 3
attention = "fnla_mul"
normalization = "batch_renorm"
[train]
epochs = 20
lr_decay = 0.99
initial_lr = 0.001
batch_size = 15
guttae_per_level = 2
flips = true
elastic_probability = 0.5
[pipeline]
k_sigma = 0.2
selection_mode = "roi"
"#,
        )
        .unwrap();
        assert_eq!(cfg.generate.mosaic.layout, Layout::Hexagonal { spacing: 12.0 });
        assert_eq!(cfg.pipeline.selection_mode, SelectionMode::Roi);
        assert_eq!(cfg.train.resolve(Role::Body, 1).epochs, 20);
        assert_eq!(cfg.net.attention, endoseg_net::AttentionKind::FnlaMul);
        assert!(RunConfig::parse("[generate.mosaic]\nlayout = { kind = \"random\" }\n").is_ok());
    }

    #[test]
    fn role_defaults_apply_when_unset() {
        let t = TrainSection::default();
        assert_eq!(t.resolve(Role::Edge, 0).epochs, 200);
        assert_eq!(t.resolve(Role::Roi, 0).lr_decay, 0.97);
    }

    #[test]
    fn invalid_values_are_input_errors() {
        for bad in ["workers = 0", "[generate]\nguttae_fractions = [1.5]", "[pipeline]\nbody_threshold = 2.0", "nonsense = 1"] {
            assert!(matches!(RunConfig::parse(bad), Err(crate::CliError::Input(_))), "{bad}");
        }
    }
}
