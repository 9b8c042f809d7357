//! `train`: fit one network role on a generated dataset.

use crate::config::RunConfig;
use crate::error::{input, runtime, CliError, Result};
use crate::manifest::{DatasetManifest, RunManifest};
use endoseg_core::imgcore::{read_gray, read_prob_map};
use endoseg_net::checkpoint::{self, CheckpointMeta};
use endoseg_net::train::{train as fit, Control, Role, TrainSample};
use endoseg_net::{build_denseunet, learning_rate, NetError};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

pub const CHECKPOINT: &str = "checkpoint.ckpt";
pub const TRAIN_LOG: &str = "train_log.jsonl";

pub fn load_samples(dataset: &Path, role: Role) -> Result<Vec<TrainSample>> {
    let manifest = DatasetManifest::load(dataset)?;
    manifest
        .entries
        .iter()
        .map(|e| {
            let target_rel = e
                .targets
                .get(role.name())
                .ok_or_else(|| input(format!("{}: no {} target", e.id, role.name())))?;
            let image = read_gray(&dataset.join(&e.image), manifest.pixel_pitch)
                .map_err(|err| input(format!("{}: {err}", e.image)))?
                .to_prob_map();
            let target = read_prob_map(&dataset.join(target_rel)).map_err(|err| input(format!("{target_rel}: {err}")))?;
            Ok(TrainSample {
                id: e.id.clone(),
                image,
                target,
                has_guttae: e.guttae_fraction > 0.0,
                total_grade: e.total_grade,
            })
        })
        .collect()
}

fn net_error(e: NetError) -> CliError {
    match e {
        NetError::InvalidArgument(_) | NetError::Core(_) => input(e),
        other => runtime(other),
    }
}

pub fn train(cfg: &RunConfig, dataset: &Path, role: Role, out: &Path) -> Result<RunManifest> {
    let started = Instant::now();
    cfg.validate()?;
    let data = load_samples(dataset, role)?;
    let tc = cfg.train.resolve(role, cfg.seed);
    tc.validate().map_err(input)?;
    std::fs::create_dir_all(out).map_err(runtime)?;
    let mut net = build_denseunet(cfg.net.clone(), cfg.seed).map_err(net_error)?;
    let log_path = out.join(TRAIN_LOG);
    let mut log = std::fs::File::create(&log_path).map_err(runtime)?;
    let outcome = fit(&mut net, &data, &tc, |rec, _| {
        let line = serde_json::to_string(rec)?;
        writeln!(log, "{line}")?;
        log.flush()?;
        Ok(Control::Continue)
    })
    .map_err(net_error)?;
    let epochs = outcome.records.len();
    let meta = CheckpointMeta {
        role: role.name().to_string(),
        seed: cfg.seed,
        epoch: epochs,
        initial_lr: tc.initial_lr,
        lr_decay: tc.lr_decay,
        next_learning_rate: learning_rate(tc.initial_lr, tc.lr_decay, epochs),
    };
    checkpoint::save(&out.join(CHECKPOINT), &net, &meta).map_err(runtime)?;

    let mut m = RunManifest::new("train", cfg);
    m.input("dataset", dataset);
    m.seeds.insert("init".to_string(), cfg.seed);
    m.seeds.insert("batches".to_string(), tc.seed);
    m.output(CHECKPOINT);
    m.output(TRAIN_LOG);
    m.notes.push(format!("role {} for {} epochs, lr {} decay {}", role.name(), epochs, tc.initial_lr, tc.lr_decay));
    m.notes.push(format!("normalization {:?}", cfg.net.normalization).to_lowercase());
    m.write(out, started)
}
