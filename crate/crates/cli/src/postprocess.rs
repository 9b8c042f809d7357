//! `postprocess`: segmentations and biomarker reports from paired maps.

use crate::config::RunConfig;
use crate::error::{runtime, Result};
use crate::infer::{list_rasters, stem};
use crate::manifest::{write_json, Failure, RunManifest};
use crate::pool;
use endoseg_core::biomarkers::BiomarkerReport;
use endoseg_core::imgcore::{read_gray, read_prob_map, write_label_pgm, write_rgb_png, DEFAULT_PIXEL_PITCH};
use endoseg_core::postproc::{cell_table, render_overlay, run_pipeline};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    id: &'a str,
    status: &'a str,
    n_cells: usize,
    ecd: Option<f64>,
    cv: Option<f64>,
    hex_vertex: Option<f64>,
    hex_neighbor: Option<f64>,
}

/// Files of both directories keyed by stem, plus the stems found in only one.
pub fn pair_by_stem(a: &[PathBuf], b: &[PathBuf]) -> (Vec<(String, PathBuf, PathBuf)>, Vec<String>) {
    let left: BTreeMap<String, &PathBuf> = a.iter().map(|p| (stem(p), p)).collect();
    let right: BTreeMap<String, &PathBuf> = b.iter().map(|p| (stem(p), p)).collect();
    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    for (id, p) in &left {
        match right.get(id) {
            Some(q) => pairs.push((id.clone(), (*p).clone(), (*q).clone())),
            None => unmatched.push(id.clone()),
        }
    }
    unmatched.extend(right.keys().filter(|id| !left.contains_key(*id)).cloned());
    unmatched.sort();
    (pairs, unmatched)
}

pub(crate) fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(runtime)?;
    }
    w.flush().map_err(runtime)
}

pub fn postprocess(
    cfg: &RunConfig,
    edges: &Path,
    selectors: &Path,
    images: Option<&Path>,
    out: &Path,
) -> Result<RunManifest> {
    let started = Instant::now();
    cfg.validate()?;
    let (pairs, unmatched) = pair_by_stem(&list_rasters(edges)?, &list_rasters(selectors)?);
    let backgrounds: BTreeMap<String, PathBuf> = match images {
        Some(dir) => list_rasters(dir)?.into_iter().map(|p| (stem(&p), p)).collect(),
        None => BTreeMap::new(),
    };
    for d in ["labels", "reports", "overlays", "cells"] {
        std::fs::create_dir_all(out.join(d)).map_err(runtime)?;
    }
    let results = pool::map(&pairs, cfg.workers, |(id, e, s)| -> Result<(BiomarkerReport, Option<String>)> {
        let attempt = || -> std::result::Result<_, endoseg_core::Error> {
            let edge = read_prob_map(e)?;
            let selector = read_prob_map(s)?;
            let (seg, report) = run_pipeline(&edge, &selector, &cfg.pipeline)?;
            write_label_pgm(&out.join(format!("labels/{id}.pgm")), &seg.labels)?;
            let bg = match backgrounds.get(id) {
                Some(p) => Some(read_gray(p, edge.pixel_pitch)?),
                None => None,
            };
            let rgb = render_overlay(&seg, bg.as_ref().filter(|im| im.width == edge.width && im.height == edge.height));
            write_rgb_png(&out.join(format!("overlays/{id}.png")), edge.width, edge.height, rgb)?;
            Ok((seg, report))
        };
        let (report, error) = match attempt() {
            Ok((seg, report)) => {
                write_csv(&out.join(format!("cells/{id}.csv")), cell_table(&seg))?;
                (report, None)
            }
            Err(err) => {
                let mut r = BiomarkerReport::empty(DEFAULT_PIXEL_PITCH);
                r.metadata.insert("status".into(), "failed".into());
                r.metadata.insert("error".into(), err.to_string());
                (r, Some(err.to_string()))
            }
        };
        write_json(&out.join(format!("reports/{id}.json")), &report)?;
        Ok((report, error))
    });
    let mut m = RunManifest::new("postprocess", cfg);
    m.input("edges", edges);
    m.input("selectors", selectors);
    if let Some(dir) = images {
        m.input("images", dir);
    }
    m.unmatched = unmatched;
    let mut rows = Vec::new();
    for ((id, _, _), r) in pairs.iter().zip(results) {
        let (report, error) = r?;
        m.output(format!("reports/{id}.json"));
        match error {
            None => {
                for f in [format!("labels/{id}.pgm"), format!("overlays/{id}.png"), format!("cells/{id}.csv")] {
                    m.output(f);
                }
            }
            Some(e) => m.failures.push(Failure { id: id.clone(), error: e }),
        }
        rows.push((id.clone(), report));
    }
    write_csv(
        &out.join("summary.csv"),
        rows.iter().map(|(id, r)| SummaryRow {
            id,
            status: if r.is_empty() { "unsuccessful" } else { "ok" },
            n_cells: r.n_cells,
            ecd: r.ecd,
            cv: r.cv,
            hex_vertex: r.hex_vertex,
            hex_neighbor: r.hex_neighbor,
        }),
    )?;
    m.output("summary.csv");
    m.write(out, started)
}
