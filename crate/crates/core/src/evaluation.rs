// SPDX-License-Identifier: MIT OR Apache-2.0

//! Ground truth, confusion counts, ROC/AUC, relative cost benefit and the
//! frequentist sample-size baseline.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::conjugate::{
    credible_interval_length, fill_samples, posterior_update, summarize, ModelDraw, NormalGammaParams,
};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::rehearsal::percentile;
use crate::rng;
use crate::stopping::DecisionKind;

/// Table of decision (continue / stop early) against truth (target reachable
/// at `n_max` or not). "Positive" means continue / reachable.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Tp,
    Fp,
    Fn,
    Tn,
}

impl ConfusionCounts {
    pub fn add(&mut self, cell: Cell) {
        match cell {
            Cell::Tp => self.tp += 1,
            Cell::Fp => self.fp += 1,
            Cell::Fn => self.fn_ += 1,
            Cell::Tn => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `(fpr, tpr)`, or `None` when either denominator is zero.
    pub fn roc_point(&self) -> Option<(f64, f64)> {
        let pos = self.tp + self.fn_;
        let neg = self.fp + self.tn;
        if pos == 0 || neg == 0 {
            return None;
        }
        Some((self.fp as f64 / neg as f64, self.tp as f64 / pos as f64))
    }
}

/// True iff the full-length dataset's posterior CIL meets the target.
pub fn ground_truth(data: &[f64], prior: &NormalGammaParams, cil_thres: f64, coverage: f64) -> Result<bool> {
    let post = posterior_update(prior, &summarize(data));
    Ok(credible_interval_length(&post, coverage)? <= cil_thres)
}

/// Only a futility stop counts as "stop early".
pub fn classify(kind: DecisionKind, truth: bool) -> Cell {
    let continued = kind != DecisionKind::StopFutility;
    match (continued, truth) {
        (true, true) => Cell::Tp,
        (true, false) => Cell::Fp,
        (false, true) => Cell::Fn,
        (false, false) => Cell::Tn,
    }
}

/// One point per confusion table (zero denominators are skipped and
/// logged), deduplicated, with both corners added, sorted by fpr then tpr.
pub fn roc_curve(per_tl: &[ConfusionCounts]) -> Vec<(f64, f64)> {
    let mut pts = vec![(0.0, 0.0), (1.0, 1.0)];
    for (j, c) in per_tl.iter().enumerate() {
        match c.roc_point() {
            Some(p) => pts.push(p),
            None => tracing::warn!(index = j, ?c, "ROC point skipped: zero denominator"),
        }
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    pts
}

/// Trapezoid-rule area under a sorted ROC curve.
pub fn auc(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::invalid("points", "need at least two points"));
    }
    if points.windows(2).any(|w| w[1].0 < w[0].0) {
        return Err(Error::Unsorted("points"));
    }
    Ok(points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum())
}

/// Successes and trials consumed by pBOS and by BOS. Real-valued so that
/// class-weighted counts can be used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBenefitInputs {
    pub n_pbos_b: f64,
    pub n_bos_b: f64,
    pub n_pbos_c: f64,
    pub n_bos_c: f64,
}

/// Relative gain in successes per trial of pBOS over BOS.
pub fn cost_benefit_ratio(x: &CostBenefitInputs) -> Result<f64> {
    for (name, v) in [
        ("n_pbos_b", x.n_pbos_b),
        ("n_bos_b", x.n_bos_b),
        ("n_pbos_c", x.n_pbos_c),
        ("n_bos_c", x.n_bos_c),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::invalid(name, format!("must be finite and >= 0, got {v}")));
        }
    }
    if x.n_pbos_c == 0.0 || x.n_bos_c == 0.0 || x.n_bos_b == 0.0 {
        return Err(Error::invalid("inputs", "n_bos_b and both trial totals must be > 0"));
    }
    let pbos = x.n_pbos_b / x.n_pbos_c;
    let bos = x.n_bos_b / x.n_bos_c;
    Ok((pbos - bos) / bos)
}

/// `round((z * sigma / e)^2)`, halves rounded away from zero.
pub fn frequentist_sample_size(z: f64, sigma: f64, e: f64) -> Result<u64> {
    for (name, v) in [("z", z), ("sigma", sigma), ("e", e)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::invalid(name, format!("must be finite and > 0, got {v}")));
        }
    }
    Ok((z * sigma / e).powi(2).round() as u64)
}

/// `pct` percentile of the posterior CIL at `n_max` over `reps` datasets
/// drawn from `model`. Consumes one `u64` from `rng`.
pub fn cil_threshold_from_percentile<R: RngCore + ?Sized>(
    prior: &NormalGammaParams,
    model: &ModelDraw,
    n_max: usize,
    pct: f64,
    reps: usize,
    rng: &mut R,
) -> Result<f64> {
    cil_threshold_with(prior, model, n_max, pct, reps, 0.95, rng.next_u64(), Execution::Sequential)
}

#[allow(clippy::too_many_arguments)]
pub fn cil_threshold_with(
    prior: &NormalGammaParams,
    model: &ModelDraw,
    n_max: usize,
    pct: f64,
    reps: usize,
    coverage: f64,
    seed: u64,
    exec: Execution,
) -> Result<f64> {
    if reps < 100 {
        return Err(Error::invalid("reps", format!("must be >= 100, got {reps}")));
    }
    if n_max == 0 {
        return Err(Error::invalid("n_max", "must be >= 1"));
    }
    if !(model.variance > 0.0) {
        return Err(Error::invalid("variance", "must be > 0"));
    }
    prior.validate()?;
    let cils = exec.map_indexed(reps, |r| {
        let mut stream = rng::stream(seed, &[r as u64]);
        let mut buf = Vec::with_capacity(n_max);
        fill_samples(model, &mut buf, n_max, &mut stream);
        let post = posterior_update(prior, &summarize(&buf));
        credible_interval_length(&post, coverage)
    });
    let mut cils = cils.into_iter().collect::<Result<Vec<_>>>()?;
    cils.sort_by(f64::total_cmp);
    percentile(&cils, pct)
}
