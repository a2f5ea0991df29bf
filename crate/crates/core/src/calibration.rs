// SPDX-License-Identifier: MIT OR Apache-2.0

//! Regression calibration of predicted CIL distributions.
//!
//! Rehearsal CILs are biased: with weak priors the simulated futures are too
//! dispersed and CILs come out too wide, with tight central priors they come
//! out too narrow. A running table of predicted medians and realised CILs
//! feeds the model
//!
//! ```text
//! 1/T^2 ~ b0 + b1 / CIL_pred^2 + b2 * i + b3 * k
//! ```
//!
//! and the fitted value at `(i, n_max)` shifts the whole predicted
//! distribution at `n_max`.

#![allow(clippy::needless_range_loop)] // 4x4 matrix code reads better indexed

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::rehearsal::median_sorted;

/// Minimum number of training pairs before a fit may be used.
pub const MIN_TRAINING_PAIRS: usize = 8;
/// Pivot tolerance on the diagonally scaled Gram matrix.
pub const PIVOT_TOLERANCE: f64 = 1e-10;
/// Floor for fitted values and shifted CILs.
pub const CALIBRATION_EPS: f64 = 1e-9;
/// Default lower bound on `i` for rows entering the regression.
pub const DEFAULT_REG_MIN_I: usize = 4;

/// Which realised CIL a predicted median is regressed against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Prediction made at `i` for horizon `k` is paired with the realised
    /// CIL at `k`, once `k` samples have actually been collected.
    #[default]
    RealizedHorizon,
    /// Every prediction made at `i` is paired with the CIL at `i` itself.
    CurrentSize,
}

/// One rehearsal's worth of calibration data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub i: usize,
    /// Realised CIL with `i` samples.
    pub t_i: f64,
    /// Predicted median CIL per future size `k`.
    pub preds: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub rows: Vec<CalibrationRow>,
    /// Realised CIL for every collected prefix size.
    pub realized: BTreeMap<usize, f64>,
}

impl CalibrationTable {
    pub fn record_realized(&mut self, k: usize, cil: f64) {
        self.realized.insert(k, cil);
    }

    pub fn push_row(&mut self, row: CalibrationRow) {
        self.rows.push(row);
    }

    /// Builds a row from a rehearsal's per-size sorted CIL lists.
    pub fn row_from_rehearsal(i: usize, t_i: f64, sizes: &[usize], cils: &[Vec<f64>]) -> CalibrationRow {
        CalibrationRow {
            i,
            t_i,
            preds: sizes
                .iter()
                .zip(cils)
                .map(|(&k, v)| (k, median_sorted(v)))
                .collect(),
        }
    }

    /// `([1, 1/pred^2, i, k], 1/T^2)` training pairs.
    pub fn training_pairs(&self, min_i: usize, pairing: Pairing) -> Vec<([f64; 4], f64)> {
        let mut pairs = Vec::new();
        for row in self.rows.iter().filter(|r| r.i >= min_i) {
            for (&k, &pred) in &row.preds {
                let target = match pairing {
                    Pairing::CurrentSize => Some(row.t_i),
                    Pairing::RealizedHorizon => self.realized.get(&k).copied(),
                };
                if let Some(t) = target {
                    pairs.push((
                        [1.0, 1.0 / (pred * pred), row.i as f64, k as f64],
                        1.0 / (t * t),
                    ));
                }
            }
        }
        pairs
    }

    /// Delimited export with columns `i,t_i,k,pred_cil`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "t_i", "k", "pred_cil"])?;
        for row in &self.rows {
            for (k, pred) in &row.preds {
                w.write_record([
                    row.i.to_string(),
                    row.t_i.to_string(),
                    k.to_string(),
                    pred.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    /// Intercept, inverse-square predicted CIL, collected size, future size.
    pub beta: [f64; 4],
    pub r_squared: f64,
    pub n_rows: usize,
    pub usable: bool,
}

impl RegressionFit {
    pub fn unusable(n_rows: usize) -> Self {
        Self {
            beta: [0.0; 4],
            r_squared: 0.0,
            n_rows,
            usable: false,
        }
    }

    pub fn predict(&self, pred_cil: f64, i: usize, k: usize) -> f64 {
        self.beta[0] + self.beta[1] / (pred_cil * pred_cil) + self.beta[2] * i as f64 + self.beta[3] * k as f64
    }
}

pub fn fit_regression(table: &CalibrationTable, min_i: usize, pairing: Pairing) -> RegressionFit {
    fit_pairs(&table.training_pairs(min_i, pairing))
}

/// Ordinary least squares through the normal equations.
pub fn fit_pairs(pairs: &[([f64; 4], f64)]) -> RegressionFit {
    let n = pairs.len();
    if n < MIN_TRAINING_PAIRS {
        return RegressionFit::unusable(n);
    }
    let mut gram = [[0.0f64; 4]; 4];
    let mut rhs = [0.0f64; 4];
    for (x, y) in pairs {
        for r in 0..4 {
            rhs[r] += x[r] * y;
            for c in r..4 {
                gram[r][c] += x[r] * x[c];
            }
        }
    }
    for r in 0..4 {
        for c in 0..r {
            gram[r][c] = gram[c][r];
        }
    }
    let Some(beta) = solve_scaled(gram, rhs) else {
        return RegressionFit::unusable(n);
    };
    if beta.iter().any(|b| !b.is_finite()) {
        return RegressionFit::unusable(n);
    }

    let mean_y = pairs.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (x, y) in pairs {
        let fitted: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
        ss_res += (y - fitted) * (y - fitted);
        ss_tot += (y - mean_y) * (y - mean_y);
    }
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else if ss_res <= f64::EPSILON {
        1.0
    } else {
        0.0
    };
    RegressionFit {
        beta,
        r_squared,
        n_rows: n,
        usable: true,
    }
}

/// Solves `G b = r` after scaling `G` to unit diagonal. Returns `None` when a
/// pivot of the scaled system falls below [`PIVOT_TOLERANCE`].
fn solve_scaled(gram: [[f64; 4]; 4], rhs: [f64; 4]) -> Option<[f64; 4]> {
    let mut d = [0.0; 4];
    for j in 0..4 {
        if gram[j][j] <= 0.0 {
            return None;
        }
        d[j] = gram[j][j].sqrt();
    }
    // Augmented scaled system.
    let mut a = [[0.0f64; 5]; 4];
    for r in 0..4 {
        for c in 0..4 {
            a[r][c] = gram[r][c] / (d[r] * d[c]);
        }
        a[r][4] = rhs[r] / d[r];
    }
    for col in 0..4 {
        let pivot = (col..4).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[pivot][col].abs() < PIVOT_TOLERANCE {
            return None;
        }
        a.swap(col, pivot);
        for r in col + 1..4 {
            let f = a[r][col] / a[col][col];
            for c in col..5 {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut z = [0.0; 4];
    for r in (0..4).rev() {
        let tail: f64 = (r + 1..4).map(|c| a[r][c] * z[c]).sum();
        z[r] = (a[r][4] - tail) / a[r][r];
    }
    Some([z[0] / d[0], z[1] / d[1], z[2] / d[2], z[3] / d[3]])
}

/// Shifts a sorted CIL distribution at `n_max` so its median matches the
/// fitted realised CIL. Returns the distribution unchanged with `false` when
/// the fit is unusable or the fitted value is not positive.
pub fn calibrate_distribution(fit: &RegressionFit, dist: &[f64], i: usize, n_max: usize) -> (Vec<f64>, bool) {
    if dist.is_empty() || !fit.usable {
        return (dist.to_vec(), false);
    }
    let med = median_sorted(dist);
    let fitted = fit.predict(med, i, n_max);
    if !(fitted > CALIBRATION_EPS) || !fitted.is_finite() {
        return (dist.to_vec(), false);
    }
    let diff = med - 1.0 / fitted.sqrt();
    let shifted = dist
        .iter()
        .map(|&v| {
            let s = v - diff;
            if s > 0.0 {
                s
            } else {
                CALIBRATION_EPS
            }
        })
        .collect();
    (shifted, true)
}
