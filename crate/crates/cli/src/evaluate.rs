//! `evaluate`: cohort error tables from paired reports and truths.

use crate::config::RunConfig;
use crate::error::{input, Result};
use crate::infer::list_with;
use crate::manifest::{write_json, RunManifest};
use crate::postprocess::{pair_by_stem, write_csv};
use endoseg_core::biomarkers::BiomarkerReport;
use endoseg_core::evalmetrics::{bland_altman, fit_error_model, mae_mape, success_rate, BlandAltman, ErrorModel, ErrorSummary};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

pub const BIOMARKERS: [&str; 4] = ["ecd", "cv", "hex_vertex", "hex_neighbor"];
const CURVE_POINTS: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct CohortPair {
    pub id: String,
    pub estimate: BiomarkerReport,
    pub truth: BiomarkerReport,
}

impl CohortPair {
    /// `(estimate, truth)` of one biomarker. Both HEX methods are scored
    /// against the annotated HEX.
    pub fn values(&self, biomarker: &str) -> (Option<f64>, Option<f64>) {
        let truth_hex = self.truth.hex_vertex.or(self.truth.hex_neighbor);
        match biomarker {
            "ecd" => (self.estimate.ecd, self.truth.ecd),
            "cv" => (self.estimate.cv, self.truth.cv),
            "hex_vertex" => (self.estimate.hex_vertex, truth_hex),
            "hex_neighbor" => (self.estimate.hex_neighbor, truth_hex),
            _ => (None, None),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRow {
    pub biomarker: String,
    pub mae: Option<f64>,
    pub mape: Option<f64>,
    pub n_present: usize,
    pub n_missing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementRow {
    pub biomarker: String,
    pub n: usize,
    pub bias: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
    pub within_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortSummary {
    pub n_images: usize,
    pub success_rate: f64,
    pub errors: Vec<ErrorRow>,
    pub agreement: Vec<AgreementRow>,
    pub error_models: BTreeMap<String, ErrorModel>,
    pub notes: Vec<String>,
}

impl CohortSummary {
    pub fn error(&self, biomarker: &str) -> Option<&ErrorRow> {
        self.errors.iter().find(|r| r.biomarker == biomarker)
    }
}

pub fn summarize(pairs: &[CohortPair]) -> Result<CohortSummary> {
    let estimates: Vec<BiomarkerReport> = pairs.iter().map(|p| p.estimate.clone()).collect();
    let mut s = CohortSummary {
        n_images: pairs.len(),
        success_rate: success_rate(&estimates),
        errors: Vec::new(),
        agreement: Vec::new(),
        error_models: BTreeMap::new(),
        notes: Vec::new(),
    };
    for b in BIOMARKERS {
        let scored: Vec<(Option<f64>, f64, usize)> = pairs
            .iter()
            .filter_map(|p| {
                let (e, t) = p.values(b);
                t.map(|t| (e, t, p.estimate.n_cells))
            })
            .collect();
        let est: Vec<Option<f64>> = scored.iter().map(|s| s.0).collect();
        let truth: Vec<f64> = scored.iter().map(|s| s.1).collect();
        let ErrorSummary { mae, mape, n_present, n_missing } = mae_mape(&est, &truth).map_err(input)?;
        s.errors.push(ErrorRow { biomarker: b.to_string(), mae, mape, n_present, n_missing });

        let present: Vec<(f64, f64, f64)> =
            scored.iter().filter_map(|&(e, t, n)| e.map(|e| (e, t, n as f64))).collect();
        let e: Vec<f64> = present.iter().map(|p| p.0).collect();
        let t: Vec<f64> = present.iter().map(|p| p.1).collect();
        match bland_altman(&e, &t) {
            Ok(BlandAltman { n, bias, sd, lower, upper, within_fraction, .. }) => s.agreement.push(AgreementRow {
                biomarker: b.to_string(),
                n,
                bias,
                sd,
                lower,
                upper,
                within_fraction,
            }),
            Err(err) => s.notes.push(format!("{b}: no Bland-Altman analysis ({err})")),
        }
        let errors: Vec<f64> = present.iter().map(|p| p.0 - p.1).collect();
        let counts: Vec<f64> = present.iter().map(|p| p.2).collect();
        match fit_error_model(&errors, &counts) {
            Ok(m) => {
                s.error_models.insert(b.to_string(), m);
            }
            Err(err) => s.notes.push(format!("{b}: no error model ({err})")),
        }
    }
    Ok(s)
}

#[derive(Serialize)]
struct PerImage<'a> {
    id: &'a str,
    success: bool,
    n_cells: usize,
    n_cells_true: usize,
    ecd: Option<f64>,
    ecd_true: Option<f64>,
    cv: Option<f64>,
    cv_true: Option<f64>,
    hex_vertex: Option<f64>,
    hex_neighbor: Option<f64>,
    hex_true: Option<f64>,
}

#[derive(Serialize)]
struct CurveRow<'a> {
    biomarker: &'a str,
    n_cells: f64,
    mean: f64,
    lower: f64,
    upper: f64,
}

#[derive(Serialize)]
struct SuccessRow {
    n_images: usize,
    n_success: usize,
    success_rate: f64,
}

fn read_report(path: &Path) -> Result<BiomarkerReport> {
    let text = std::fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", path.display())))
}

pub fn evaluate(cfg: &RunConfig, reports: &Path, truths: &Path, out: &Path) -> Result<RunManifest> {
    let started = Instant::now();
    cfg.validate()?;
    let (paired, unmatched) = pair_by_stem(&list_with(reports, &["json"])?, &list_with(truths, &["json"])?);
    let pairs = paired
        .iter()
        .map(|(id, r, t)| Ok(CohortPair { id: id.clone(), estimate: read_report(r)?, truth: read_report(t)? }))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&pairs)?;
    std::fs::create_dir_all(out).map_err(crate::error::runtime)?;

    write_csv(
        &out.join("per_image.csv"),
        pairs.iter().map(|p| PerImage {
            id: &p.id,
            success: !p.estimate.is_empty(),
            n_cells: p.estimate.n_cells,
            n_cells_true: p.truth.n_cells,
            ecd: p.estimate.ecd,
            ecd_true: p.truth.ecd,
            cv: p.estimate.cv,
            cv_true: p.truth.cv,
            hex_vertex: p.estimate.hex_vertex,
            hex_neighbor: p.estimate.hex_neighbor,
            hex_true: p.values("hex_vertex").1,
        }),
    )?;
    write_csv(&out.join("errors.csv"), &summary.errors)?;
    write_csv(
        &out.join("success.csv"),
        [SuccessRow {
            n_images: summary.n_images,
            n_success: pairs.iter().filter(|p| !p.estimate.is_empty()).count(),
            success_rate: summary.success_rate,
        }],
    )?;
    write_csv(&out.join("bland_altman.csv"), &summary.agreement)?;
    write_csv(
        &out.join("error_model.csv"),
        summary.error_models.iter().flat_map(|(b, m)| {
            m.curve(CURVE_POINTS)
                .into_iter()
                .map(move |(n, mean, lower, upper)| CurveRow { biomarker: b, n_cells: n, mean, lower, upper })
        }),
    )?;
    write_json(&out.join("error_model.json"), &summary.error_models)?;

    let mut m = RunManifest::new("evaluate", cfg);
    m.input("reports", reports);
    m.input("truths", truths);
    m.unmatched = unmatched;
    m.notes = summary.notes.clone();
    for f in ["per_image.csv", "errors.csv", "success.csv", "bland_altman.csv", "error_model.csv", "error_model.json"] {
        m.output(f);
    }
    m.write(out, started)
}
