//! Argument parsing and dispatch.

use crate::config::RunConfig;
use crate::error::{input, Result};
use crate::manifest::RunManifest;
use clap::{Parser, Subcommand, ValueEnum};
use endoseg_core::postproc::SelectionMode;
use endoseg_net::train::Role;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "endoseg", version, about = "Corneal endothelium segmentation and biomarker estimation")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoleArg {
    Edge,
    Body,
    Blob,
    Roi,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::Edge => Role::Edge,
            RoleArg::Body => Role::Body,
            RoleArg::Blob => Role::Blob,
            RoleArg::Roi => Role::Roi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Body,
    Blob,
    Roi,
}

impl From<ModeArg> for SelectionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Body => SelectionMode::Body,
            ModeArg::Blob => SelectionMode::Blob,
            ModeArg::Roi => SelectionMode::Roi,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic dataset: images, targets, annotations, truth and dataset.json.
    Generate {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train one network role on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        role: RoleArg,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Probability maps for every image in a directory.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        images: PathBuf,
    },
    /// Segmentations and reports from edge and selector maps paired by stem.
    Postprocess {
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        selectors: PathBuf,
        /// Grayscale images used as overlay background.
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Cohort errors from reports and truths paired by stem.
    Evaluate {
        #[arg(long)]
        reports: PathBuf,
        #[arg(long)]
        truths: PathBuf,
    },
}

/// Effective config: file values with flags applied on top.
pub fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    match &cli.command {
        Command::Generate { count: Some(n) } => cfg.generate.count = *n,
        Command::Train { epochs: Some(e), .. } => cfg.train.epochs = Some(*e),
        Command::Postprocess { mode: Some(m), .. } => cfg.pipeline.selection_mode = (*m).into(),
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<RunManifest> {
    let cfg = effective_config(cli)?;
    let out: &Path = cli.out.as_deref().ok_or_else(|| input("--out is required"))?;
    match &cli.command {
        Command::Generate { .. } => crate::generate::generate(&cfg, out),
        Command::Train { dataset, role, .. } => crate::train::train(&cfg, dataset, (*role).into(), out),
        Command::Infer { checkpoint, images } => crate::infer::infer(&cfg, checkpoint, images, out),
        Command::Postprocess { edges, selectors, images, .. } => {
            crate::postprocess::postprocess(&cfg, edges, selectors, images.as_deref(), out)
        }
        Command::Evaluate { reports, truths } => crate::evaluate::evaluate(&cfg, reports, truths, out),
    }
}
