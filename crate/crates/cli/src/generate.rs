//! `generate`: synthetic dataset with images, targets, annotations and truth.

use crate::config::RunConfig;
use crate::error::{runtime, Result};
use crate::manifest::{write_json, DatasetEntry, DatasetManifest, RunManifest, DATASET_MANIFEST};
use crate::pool;
use endoseg_core::imgcore::{write_gray_png, write_prob_map};
use endoseg_core::synthgen::{generate_mosaic, insert_guttae, make_targets, render_specular, true_biomarkers};
use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

pub const ROLES: [&str; 4] = ["edge", "body", "blob", "roi"];

/// Mosaic seed of image `index` (splitmix64 of the run seed and index).
pub fn image_seed(run_seed: u64, index: usize) -> u64 {
    let mut z = run_seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn image_id(index: usize) -> String {
    format!("img{index:04}")
}

fn cycled(list: &[f64], index: usize, fallback: f64) -> f64 {
    if list.is_empty() {
        fallback
    } else {
        list[index % list.len()]
    }
}

pub fn generate(cfg: &RunConfig, out: &Path) -> Result<RunManifest> {
    let started = Instant::now();
    cfg.validate()?;
    for dir in ["images", "annotations", "truth", "cells"].iter().map(|d| d.to_string()).chain(ROLES.iter().map(|r| format!("targets/{r}"))) {
        std::fs::create_dir_all(out.join(&dir)).map_err(|e| runtime(format!("{}: {e}", out.join(&dir).display())))?;
    }
    let g = &cfg.generate;
    let indices: Vec<usize> = (0..g.count).collect();
    let results = pool::map(&indices, cfg.workers, |&i| -> Result<DatasetEntry> {
        let id = image_id(i);
        let mut spec = g.mosaic.clone();
        spec.seed = image_seed(cfg.seed, i);
        spec.guttae_fraction = cycled(&g.guttae_fractions, i, spec.guttae_fraction);
        spec.blur_sigma = cycled(&g.blur_sigmas, i, spec.blur_sigma);
        let fail = |e: endoseg_core::Error| runtime(format!("{id}: {e}"));
        let gold = insert_guttae(&generate_mosaic(&spec).map_err(fail)?.gold, &spec);
        let targets = make_targets(&gold);
        let graded = render_specular(&gold, &spec);
        let truth = true_biomarkers(&gold);

        let mut prov = BTreeMap::new();
        prov.insert("id".to_string(), id.clone());
        prov.insert("seed".to_string(), spec.seed.to_string());
        let image = format!("images/{id}.png");
        write_gray_png(&out.join(&image), &graded.image).map_err(fail)?;
        let mut paths = BTreeMap::new();
        for (role, map) in ROLES.iter().zip([&targets.edge, &targets.body, &targets.blob, &targets.roi]) {
            let rel = format!("targets/{role}/{id}.pgm");
            let mut p = prov.clone();
            p.insert("role".to_string(), role.to_string());
            write_prob_map(&out.join(&rel), map, p).map_err(fail)?;
            paths.insert(role.to_string(), rel);
        }
        let annotation = format!("annotations/{id}.pgm");
        write_prob_map(&out.join(&annotation), &gold.annotation, prov).map_err(fail)?;
        let truth_path = format!("truth/{id}.json");
        write_json(&out.join(&truth_path), &truth)?;
        let cells = format!("cells/{id}.json");
        let by_id: BTreeMap<u32, &endoseg_core::synthgen::GoldCell> = gold.cells.iter().map(|c| (c.id, c)).collect();
        write_json(&out.join(&cells), &by_id)?;
        Ok(DatasetEntry {
            id,
            seed: spec.seed,
            image,
            targets: paths,
            annotation,
            truth: truth_path,
            cells,
            guttae_fraction: spec.guttae_fraction,
            blur_sigma: spec.blur_sigma,
            guttae_grade: graded.guttae_grade,
            blur_grade: graded.blur_grade,
            total_grade: graded.total_grade,
            n_cells: truth.n_cells,
            ecd: truth.ecd,
            cv: truth.cv,
            hex_vertex: truth.hex_vertex,
            hex_neighbor: truth.hex_neighbor,
        })
    });
    let entries = results.into_iter().collect::<Result<Vec<_>>>()?;
    let dataset = DatasetManifest {
        width: g.mosaic.width,
        height: g.mosaic.height,
        pixel_pitch: g.mosaic.pixel_pitch,
        entries,
    };
    write_json(&out.join(DATASET_MANIFEST), &dataset)?;

    let mut m = RunManifest::new("generate", cfg);
    m.output(DATASET_MANIFEST);
    for e in &dataset.entries {
        m.seeds.insert(e.id.clone(), e.seed);
        m.output(e.image.clone());
        m.output(e.annotation.clone());
        m.output(e.truth.clone());
        m.output(e.cells.clone());
        m.outputs.extend(e.targets.values().cloned());
    }
    m.write(out, started)
}
