//! `infer`: probability maps from a checkpoint.

use crate::config::RunConfig;
use crate::error::{input, runtime, Result};
use crate::manifest::{Failure, RunManifest};
use crate::pool;
use endoseg_core::imgcore::{read_prob_map, write_prob_map};
use endoseg_net::checkpoint;
use endoseg_net::train::predict_maps;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Raster files (`.pgm`, `.png`) in `dir`, sorted by name.
pub fn list_rasters(dir: &Path) -> Result<Vec<PathBuf>> {
    list_with(dir, &["pgm", "png"])
}

pub(crate) fn list_with(dir: &Path, extensions: &[&str]) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| input(format!("{}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in rd {
        let p = entry.map_err(runtime)?.path();
        let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        let sidecar = p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".meta.json"));
        if p.is_file() && extensions.contains(&ext.as_str()) && !sidecar {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

pub fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

pub fn infer(cfg: &RunConfig, checkpoint_path: &Path, images: &Path, out: &Path) -> Result<RunManifest> {
    let started = Instant::now();
    cfg.validate()?;
    let (net, meta) =
        checkpoint::load(checkpoint_path).map_err(|e| input(format!("{}: {e}", checkpoint_path.display())))?;
    let files = list_rasters(images)?;
    std::fs::create_dir_all(out).map_err(runtime)?;
    let ckpt_name = checkpoint_path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
    let results = pool::map_with(&files, cfg.workers, || net.clone(), |net, file| -> std::result::Result<String, String> {
        let id = stem(file);
        let image = read_prob_map(file).map_err(|e| e.to_string())?;
        let map = predict_maps(net, std::slice::from_ref(&image), 1)
            .map_err(|e| e.to_string())?
            .remove(0);
        let mut prov = BTreeMap::new();
        prov.insert("role".to_string(), meta.role.clone());
        prov.insert("checkpoint".to_string(), ckpt_name.clone());
        prov.insert("epoch".to_string(), meta.epoch.to_string());
        prov.insert("source".to_string(), file.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string());
        let rel = format!("{id}.pgm");
        write_prob_map(&out.join(&rel), &map, prov).map_err(|e| e.to_string())?;
        Ok(rel)
    });
    let mut m = RunManifest::new("infer", cfg);
    m.input("checkpoint", checkpoint_path);
    m.input("images", images);
    m.seeds.insert("checkpoint".to_string(), meta.seed);
    for (file, r) in files.iter().zip(results) {
        match r {
            Ok(rel) => {
                m.output(format!("{}.meta.json", stem(Path::new(&rel))));
                m.output(rel);
            }
            Err(error) => m.failures.push(Failure { id: stem(file), error }),
        }
    }
    m.write(out, started)
}
