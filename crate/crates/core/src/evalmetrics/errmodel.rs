//! Exponential model of estimation error versus cell count.
//!
//! Errors are grouped into cell-count bins; the bin means are fitted with
//! `a * exp(b * n) + c` and the bin SDs with `a * exp(b * n)`. For a fixed `b`
//! both models are linear in the remaining coefficients, so `b` is found by a
//! fixed grid search on the profiled residual, refined by golden-section
//! search and polished with Gauss-Newton steps that are only accepted when
//! they lower the residual.

use crate::error::{invalid, Error, Result};
use serde::{Deserialize, Serialize};

/// Bin width in cells.
pub const BIN_WIDTH: f64 = 25.0;
/// Bins with fewer samples are ignored.
pub const MIN_BIN_SAMPLES: usize = 8;

const GRID_POINTS: usize = 200;
/// Largest `|b| * (n_max - n_min)` explored by the grid.
const MAX_DECAY: f64 = 12.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBin {
    /// Mean cell count of the samples in the bin.
    pub center: f64,
    pub count: usize,
    pub mean: f64,
    /// Sample SD of the errors in the bin.
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorModel {
    pub mean_a: f64,
    pub mean_b: f64,
    pub mean_c: f64,
    pub sd_a: f64,
    pub sd_b: f64,
    pub mean_sse: f64,
    pub sd_sse: f64,
    pub bins: Vec<ErrorBin>,
}

impl ErrorModel {
    pub fn mean_at(&self, n: f64) -> f64 {
        self.mean_a * (self.mean_b * n).exp() + self.mean_c
    }

    pub fn sd_at(&self, n: f64) -> f64 {
        self.sd_a * (self.sd_b * n).exp()
    }

    /// `(n, mean, mean - 2 SD, mean + 2 SD)` at `points` evenly spaced counts
    /// across the fitted bins.
    pub fn curve(&self, points: usize) -> Vec<(f64, f64, f64, f64)> {
        let (lo, hi) = match (self.bins.first(), self.bins.last()) {
            (Some(a), Some(b)) => (a.center, b.center),
            _ => return Vec::new(),
        };
        (0..points)
            .map(|i| {
                let n = if points > 1 {
                    lo + (hi - lo) * i as f64 / (points - 1) as f64
                } else {
                    lo
                };
                let (m, s) = (self.mean_at(n), self.sd_at(n));
                (n, m, m - 2.0 * s, m + 2.0 * s)
            })
            .collect()
    }
}

pub fn fit_error_model(errors: &[f64], cell_counts: &[f64]) -> Result<ErrorModel> {
    if errors.len() != cell_counts.len() {
        return Err(Error::ShapeMismatch("errors and cell counts differ in length".into()));
    }
    if errors.len() < 10 {
        return invalid("error model needs at least 10 samples");
    }
    if cell_counts.iter().any(|&n| !(n > 0.0)) || errors.iter().any(|e| !e.is_finite()) {
        return invalid("cell counts must be positive and errors finite");
    }
    let bins = make_bins(errors, cell_counts);
    if bins.len() < 3 {
        return Err(Error::NonConvergence(format!(
            "only {} bins with at least {MIN_BIN_SAMPLES} samples",
            bins.len()
        )));
    }
    let x: Vec<f64> = bins.iter().map(|b| b.center).collect();
    let means: Vec<f64> = bins.iter().map(|b| b.mean).collect();
    let sds: Vec<f64> = bins.iter().map(|b| b.sd).collect();
    let (ma, mb, mc, mean_sse) = fit(&x, &means, true)?;
    let (sa, sb, _, sd_sse) = fit(&x, &sds, false)?;
    Ok(ErrorModel {
        mean_a: ma,
        mean_b: mb,
        mean_c: mc,
        sd_a: sa,
        sd_b: sb,
        mean_sse,
        sd_sse,
        bins,
    })
}

fn make_bins(errors: &[f64], counts: &[f64]) -> Vec<ErrorBin> {
    let mut groups: std::collections::BTreeMap<i64, Vec<(f64, f64)>> = Default::default();
    for (&e, &n) in errors.iter().zip(counts) {
        groups.entry((n / BIN_WIDTH).floor() as i64).or_default().push((n, e));
    }
    groups
        .into_values()
        .filter(|g| g.len() >= MIN_BIN_SAMPLES)
        .map(|g| {
            let k = g.len() as f64;
            let center = g.iter().map(|p| p.0).sum::<f64>() / k;
            let mean = g.iter().map(|p| p.1).sum::<f64>() / k;
            let var = g.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>() / (k - 1.0);
            ErrorBin {
                center,
                count: g.len(),
                mean,
                sd: var.sqrt(),
            }
        })
        .collect()
}

/// Least-squares coefficients for fixed `b`: `(a, c, sse)`.
fn linear_part(x: &[f64], y: &[f64], b: f64, offset: bool) -> (f64, f64, f64) {
    let e: Vec<f64> = x.iter().map(|&n| (b * n).exp()).collect();
    let n = x.len() as f64;
    let (a, c) = if offset {
        let (se, see, sy, sey) = e.iter().zip(y).fold((0.0, 0.0, 0.0, 0.0), |acc, (ei, yi)| {
            (acc.0 + ei, acc.1 + ei * ei, acc.2 + yi, acc.3 + ei * yi)
        });
        let det = n * see - se * se;
        if det.abs() <= 1e-12 * (n * see).max(1e-300) {
            (0.0, sy / n)
        } else {
            ((n * sey - se * sy) / det, (see * sy - se * sey) / det)
        }
    } else {
        let see: f64 = e.iter().map(|v| v * v).sum();
        let sey: f64 = e.iter().zip(y).map(|(a, b)| a * b).sum();
        (if see > 0.0 { (sey / see).max(0.0) } else { 0.0 }, 0.0)
    };
    let sse = e
        .iter()
        .zip(y)
        .map(|(ei, yi)| (a * ei + c - yi).powi(2))
        .sum();
    (a, c, sse)
}

fn fit(x: &[f64], y: &[f64], offset: bool) -> Result<(f64, f64, f64, f64)> {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1.0);
    let b_max = MAX_DECAY / span;
    let step = 2.0 * b_max / GRID_POINTS as f64;
    // grid at half-steps so b = 0 (where a and c are collinear) is skipped
    let grid: Vec<f64> = (0..GRID_POINTS).map(|i| -b_max + (i as f64 + 0.5) * step).collect();
    let profile = |b: f64| linear_part(x, y, b, offset).2;
    let mut best = 0;
    let mut best_sse = f64::INFINITY;
    for (i, &b) in grid.iter().enumerate() {
        let s = profile(b);
        if s < best_sse {
            best_sse = s;
            best = i;
        }
    }
    // golden-section refinement inside the neighbouring grid cells
    let (mut l, mut r) = (grid[best] - step, grid[best] + step);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut m1 = r - g * (r - l);
    let mut m2 = l + g * (r - l);
    let (mut f1, mut f2) = (profile(m1), profile(m2));
    for _ in 0..80 {
        if f1 <= f2 {
            r = m2;
            m2 = m1;
            f2 = f1;
            m1 = r - g * (r - l);
            f1 = profile(m1);
        } else {
            l = m1;
            m1 = m2;
            f1 = f2;
            m2 = l + g * (r - l);
            f2 = profile(m2);
        }
    }
    let mut b = if f1 <= f2 { m1 } else { m2 };
    if profile(b) > best_sse {
        b = grid[best];
    }
    let (mut a, mut c, mut sse) = linear_part(x, y, b, offset);

    // Gauss-Newton polish on (a, b[, c]) with step halving
    for _ in 0..20 {
        let Some((da, db, dc)) = gauss_newton_step(x, y, a, b, c, offset) else {
            break;
        };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..20 {
            let (na, nb, nc) = (a + t * da, b + t * db, c + t * dc);
            let na = if offset { na } else { na.max(0.0) };
            let s: f64 = x
                .iter()
                .zip(y)
                .map(|(&n, &yi)| (na * (nb * n).exp() + nc - yi).powi(2))
                .sum();
            if s.is_finite() && s < sse {
                (a, b, c, sse) = (na, nb, nc, s);
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if ![a, b, c, sse].iter().all(|v| v.is_finite()) {
        return Err(Error::NonConvergence(format!("residual {sse}")));
    }
    Ok((a, b, c, sse))
}

fn gauss_newton_step(x: &[f64], y: &[f64], a: f64, b: f64, c: f64, offset: bool) -> Option<(f64, f64, f64)> {
    let k = if offset { 3 } else { 2 };
    let mut jtj = [[0.0f64; 3]; 3];
    let mut jtr = [0.0f64; 3];
    for (&n, &yi) in x.iter().zip(y) {
        let e = (b * n).exp();
        let r = yi - (a * e + c);
        let j = [e, a * n * e, 1.0];
        for p in 0..k {
            jtr[p] += j[p] * r;
            for q in 0..k {
                jtj[p][q] += j[p] * j[q];
            }
        }
    }
    // small Levenberg damping keeps the system solvable
    for (p, row) in jtj.iter_mut().enumerate().take(k) {
        row[p] *= 1.0 + 1e-9;
        row[p] += 1e-300;
    }
    let sol = solve(&jtj, &jtr, k)?;
    Some((sol[0], sol[1], if offset { sol[2] } else { 0.0 }))
}

/// Gaussian elimination with partial pivoting on the leading `k x k` block.
fn solve(m: &[[f64; 3]; 3], v: &[f64; 3], k: usize) -> Option<[f64; 3]> {
    let mut a = *m;
    let mut b = *v;
    for col in 0..k {
        let piv = (col..k).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..k {
            let f = a[row][col] / a[col][col];
            for c in col..k {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut out = [0.0; 3];
    for row in (0..k).rev() {
        let mut s = b[row];
        for c in row + 1..k {
            s -= a[row][c] * out[c];
        }
        out[row] = s / a[row][row];
    }
    out.iter().all(|v| v.is_finite()).then_some(out)
}
