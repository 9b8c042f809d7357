//! Evaluation mathematics: pixel metrics, biomarker error metrics,
//! Bland-Altman agreement and the exponential error model.

mod errmodel;

pub use errmodel::{fit_error_model, ErrorBin, ErrorModel, BIN_WIDTH, MIN_BIN_SAMPLES};

use crate::biomarkers::BiomarkerReport;
use crate::error::{invalid, Error, Result};
use crate::imgcore::ProbMap;
use serde::{Deserialize, Serialize};

/// Binarisation threshold for soft maps.
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub accuracy: f64,
    pub dice: f64,
    pub mhd: Option<f64>,
}

fn check_shape(a: &ProbMap, b: &ProbMap) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )))
    }
}

/// Percentage of pixels on the same side of `threshold` in both maps.
pub fn pixel_accuracy(pred: &ProbMap, target: &ProbMap, threshold: f64) -> Result<f64> {
    check_shape(pred, target)?;
    if pred.data.is_empty() {
        return Ok(100.0);
    }
    let agree = pred
        .data
        .iter()
        .zip(&target.data)
        .filter(|(p, t)| (**p >= threshold) == (**t >= threshold))
        .count();
    Ok(100.0 * agree as f64 / pred.data.len() as f64)
}

/// Sørensen-Dice overlap of the binarised foregrounds in percent; 100 when
/// both are empty.
pub fn dice(pred: &ProbMap, target: &ProbMap, threshold: f64) -> Result<f64> {
    check_shape(pred, target)?;
    let (mut a, mut b, mut both) = (0usize, 0usize, 0usize);
    for (p, t) in pred.data.iter().zip(&target.data) {
        let (pa, tb) = (*p >= threshold, *t >= threshold);
        a += pa as usize;
        b += tb as usize;
        both += (pa && tb) as usize;
    }
    if a + b == 0 {
        return Ok(100.0);
    }
    Ok(100.0 * 2.0 * both as f64 / (a + b) as f64)
}

/// Modified Hausdorff distance: the larger of the two directed mean
/// nearest-neighbour distances.
pub fn mhd(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return invalid("modified Hausdorff distance needs two non-empty point sets");
    }
    Ok(directed_mean(a, b).max(directed_mean(b, a)))
}

fn directed_mean(from: &[(f64, f64)], to: &[(f64, f64)]) -> f64 {
    let mut sorted = to.to_vec();
    sorted.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));
    let mut sum = 0.0;
    for &p in from {
        sum += nearest_sq(&sorted, p).sqrt();
    }
    sum / from.len() as f64
}

/// Squared distance to the nearest point of an x-sorted set, scanning
/// outwards from `p.0` until the x gap alone exceeds the best distance.
fn nearest_sq(sorted: &[(f64, f64)], p: (f64, f64)) -> f64 {
    let start = sorted.partition_point(|q| q.0 < p.0);
    let mut best = f64::INFINITY;
    for q in &sorted[start..] {
        let dx = q.0 - p.0;
        if dx * dx > best {
            break;
        }
        best = best.min(dx * dx + (q.1 - p.1).powi(2));
    }
    for q in sorted[..start].iter().rev() {
        let dx = p.0 - q.0;
        if dx * dx > best {
            break;
        }
        best = best.min(dx * dx + (q.1 - p.1).powi(2));
    }
    best
}

/// Coordinates of pixels at or above `threshold`.
pub fn edge_points(map: &ProbMap, threshold: f64) -> Vec<(f64, f64)> {
    map.threshold(threshold)
        .points()
        .into_iter()
        .map(|(x, y)| (x as f64, y as f64))
        .collect()
}

/// Accuracy, DICE and (when both maps have foreground) MHD.
pub fn evaluate_maps(pred: &ProbMap, target: &ProbMap) -> Result<MetricRecord> {
    let pa = edge_points(pred, THRESHOLD);
    let pb = edge_points(target, THRESHOLD);
    Ok(MetricRecord {
        accuracy: pixel_accuracy(pred, target, THRESHOLD)?,
        dice: dice(pred, target, THRESHOLD)?,
        mhd: if pa.is_empty() || pb.is_empty() {
            None
        } else {
            Some(mhd(&pa, &pb)?)
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    /// Mean absolute error over present estimates.
    pub mae: Option<f64>,
    /// Mean absolute percentage error; a missing estimate counts 100 %.
    pub mape: Option<f64>,
    pub n_present: usize,
    pub n_missing: usize,
}

pub fn mae_mape(estimates: &[Option<f64>], truths: &[f64]) -> Result<ErrorSummary> {
    if estimates.len() != truths.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} estimates vs {} truths",
            estimates.len(),
            truths.len()
        )));
    }
    let (mut abs, mut pct) = (0.0, 0.0);
    let (mut present, mut missing, mut pct_n) = (0usize, 0usize, 0usize);
    for (e, &t) in estimates.iter().zip(truths) {
        match e {
            Some(e) => {
                abs += (e - t).abs();
                present += 1;
                if t != 0.0 {
                    pct += 100.0 * (e - t).abs() / t.abs();
                    pct_n += 1;
                }
            }
            None => {
                missing += 1;
                pct += 100.0;
                pct_n += 1;
            }
        }
    }
    Ok(ErrorSummary {
        mae: (present > 0).then(|| abs / present as f64),
        mape: (pct_n > 0).then(|| pct / pct_n as f64),
        n_present: present,
        n_missing: missing,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    pub n: usize,
    pub bias: f64,
    /// Sample SD of the differences.
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
    pub within_fraction: f64,
    /// The differences have zero spread, so the limits collapse to the bias.
    pub degenerate: bool,
}

/// Bias and 95 % limits of agreement (`bias ± 1.96 SD`) of `estimate - truth`.
pub fn bland_altman(estimates: &[f64], truths: &[f64]) -> Result<BlandAltman> {
    if estimates.len() != truths.len() {
        return Err(Error::ShapeMismatch("estimates and truths differ in length".into()));
    }
    let n = estimates.len();
    if n < 3 {
        return invalid("Bland-Altman analysis needs at least 3 pairs");
    }
    let d: Vec<f64> = estimates.iter().zip(truths).map(|(e, t)| e - t).collect();
    let bias = d.iter().sum::<f64>() / n as f64;
    let sd = (d.iter().map(|x| (x - bias).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let scale = d.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    let degenerate = sd <= 1e-12 * scale;
    let (lower, upper) = (bias - 1.96 * sd, bias + 1.96 * sd);
    let tol = if degenerate { 1e-12 * scale } else { 0.0 };
    let within = d.iter().filter(|&&x| x >= lower - tol && x <= upper + tol).count();
    Ok(BlandAltman {
        n,
        bias,
        sd,
        lower,
        upper,
        within_fraction: within as f64 / n as f64,
        degenerate,
    })
}

/// Percentage of non-empty reports; 0 for an empty list.
pub fn success_rate(reports: &[BiomarkerReport]) -> f64 {
    if reports.is_empty() {
        return 0.0;
    }
    100.0 * reports.iter().filter(|r| !r.is_empty()).count() as f64 / reports.len() as f64
}
