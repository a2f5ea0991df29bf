// SPDX-License-Identifier: MIT OR Apache-2.0

//! The pBOS state machine.
//!
//! After every batch: success check (CIL at or below target), resource cap,
//! then — once `n_min` samples are in — rehearsal, calibration and the
//! tolerance-level futility check. `tl = 0` never stops for futility and so
//! reproduces plain Bayesian optional stopping.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    calibrate_distribution, fit_regression, CalibrationTable, Pairing, RegressionFit,
    DEFAULT_REG_MIN_I,
};
use crate::conjugate::{
    cached_t_quantile, check_coverage, cil_from_quantile, posterior_update, DataSummary,
    NormalGammaParams,
};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::rehearsal::{median_sorted, percentile_unchecked, run_rehearsal_with, RehearsalConfig, DEFAULT_M};
use crate::rng;

pub const DEFAULT_COVERAGE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawStoppingConfig")]
pub struct StoppingConfig {
    /// Target CIL.
    pub cil_thres: f64,
    pub coverage: f64,
    /// Tolerance level: required probability of reaching the target by `n_max`.
    pub tl: f64,
    /// No futility stop before this many samples.
    pub n_min: usize,
    /// Resource cap.
    pub n_max: usize,
    /// Samples between checks.
    pub batch: usize,
    pub rehearsal: RehearsalConfig,
    /// Calibration rows with `i` below this stay out of the regression.
    pub reg_min_i: usize,
    pub pairing: Pairing,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStoppingConfig {
    cil_thres: f64,
    #[serde(default = "default_coverage")]
    coverage: f64,
    tl: f64,
    n_min: usize,
    n_max: usize,
    #[serde(default = "default_batch")]
    batch: usize,
    #[serde(default)]
    rehearsal: Option<RehearsalConfig>,
    #[serde(default = "default_reg_min_i")]
    reg_min_i: usize,
    #[serde(default)]
    pairing: Pairing,
}

fn default_coverage() -> f64 {
    DEFAULT_COVERAGE
}
fn default_batch() -> usize {
    1
}
fn default_reg_min_i() -> usize {
    DEFAULT_REG_MIN_I
}

impl From<RawStoppingConfig> for StoppingConfig {
    fn from(r: RawStoppingConfig) -> Self {
        let rehearsal = r
            .rehearsal
            .unwrap_or_else(|| RehearsalConfig::full(DEFAULT_M, r.n_max, r.coverage));
        Self {
            cil_thres: r.cil_thres,
            coverage: r.coverage,
            tl: r.tl,
            n_min: r.n_min,
            n_max: r.n_max,
            batch: r.batch,
            rehearsal,
            reg_min_i: r.reg_min_i,
            pairing: r.pairing,
        }
    }
}

impl StoppingConfig {
    /// Defaults: 95% coverage, batch 1, m = 200 rehearsals over every size up
    /// to `n_max`.
    pub fn new(cil_thres: f64, tl: f64, n_min: usize, n_max: usize) -> Self {
        Self {
            cil_thres,
            coverage: DEFAULT_COVERAGE,
            tl,
            n_min,
            n_max,
            batch: 1,
            rehearsal: RehearsalConfig::full(DEFAULT_M, n_max, DEFAULT_COVERAGE),
            reg_min_i: DEFAULT_REG_MIN_I,
            pairing: Pairing::default(),
        }
    }

    pub fn with_m(mut self, m: usize) -> Self {
        self.rehearsal.m = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cil_thres > 0.0) {
            return Err(Error::invalid("cil_thres", format!("must be > 0, got {}", self.cil_thres)));
        }
        check_coverage(self.coverage)?;
        if !(0.0..=1.0).contains(&self.tl) {
            return Err(Error::invalid("tl", format!("must lie in [0, 1], got {}", self.tl)));
        }
        if self.n_min < 1 {
            return Err(Error::invalid("n_min", "must be >= 1"));
        }
        if self.n_min > self.n_max {
            return Err(Error::invalid(
                "n_min",
                format!("must not exceed n_max ({} > {})", self.n_min, self.n_max),
            ));
        }
        if self.batch < 1 {
            return Err(Error::invalid("batch", "must be >= 1"));
        }
        self.rehearsal.validate(self.n_max)?;
        if self.rehearsal.max_size() != self.n_max {
            return Err(Error::invalid(
                "rehearsal.sizes",
                format!("must end at n_max = {}", self.n_max),
            ));
        }
        if self.rehearsal.coverage != self.coverage {
            return Err(Error::invalid("rehearsal.coverage", "must equal coverage"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecisionKind {
    Continue,
    StopTargetReached,
    StopFutility,
    StopAtMax { target_met: bool },
}

impl DecisionKind {
    pub fn is_stop(self) -> bool {
        !matches!(self, DecisionKind::Continue)
    }

    /// Flat label used in delimited output.
    pub fn label(self) -> &'static str {
        match self {
            DecisionKind::Continue => "continue",
            DecisionKind::StopTargetReached => "stop_target_reached",
            DecisionKind::StopFutility => "stop_futility",
            DecisionKind::StopAtMax { target_met: true } => "stop_at_max_met",
            DecisionKind::StopAtMax { target_met: false } => "stop_at_max_unmet",
        }
    }
}

/// Summary of a CIL distribution at `n_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistSummary {
    pub min: f64,
    pub median: f64,
    pub tl_percentile: f64,
    pub max: f64,
}

impl DistSummary {
    fn of(sorted: &[f64], tl: f64) -> Self {
        Self {
            min: sorted[0],
            median: median_sorted(sorted),
            tl_percentile: percentile_unchecked(sorted, tl),
            max: sorted[sorted.len() - 1],
        }
    }
}

/// Populated whenever the rehearsal branch ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// TL percentile of the (calibrated when possible) CIL distribution at `n_max`.
    pub tl_cil_at_nmax: f64,
    pub calibrated: bool,
    /// Fraction of predicted CILs at `n_max` at or below the target.
    pub success_prob: f64,
    /// Median of the uncalibrated prediction at `n_max`.
    pub raw_median: f64,
    pub distribution: DistSummary,
    pub fit: RegressionFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub i: usize,
    pub kind: DecisionKind,
    pub t_i: f64,
    pub diagnostics: Option<Diagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Status {
    Running,
    Stopped { decision: Decision },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub prior: NormalGammaParams,
    pub observations: Vec<f64>,
    pub summary: DataSummary,
    pub posterior: NormalGammaParams,
    /// `(i, T_i)` at every check.
    pub trajectory: Vec<(usize, f64)>,
    pub table: CalibrationTable,
    pub status: Status,
    /// Rehearsal streams derive from `(seed, i)`.
    pub seed: u64,
    pub last_decision: Option<Decision>,
    /// Calibrated (or raw) distribution at `n_max` from the latest rehearsal.
    pub cached_dist: Option<Vec<f64>>,
}

/// Non-mutating overrides for [`SessionState::what_if`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WhatIf {
    pub tl: Option<f64>,
    pub cil_thres: Option<f64>,
}

/// Success check. The boundary counts as reached.
pub fn bos_check(t_i: f64, cil_thres: f64) -> bool {
    t_i <= cil_thres
}

/// `true` (stop) iff `tl > 0` and the `tl` percentile of the sorted
/// distribution exceeds the target. Ties continue.
pub fn futility_check(sorted_dist: &[f64], tl: f64, cil_thres: f64) -> bool {
    if tl <= 0.0 || sorted_dist.is_empty() {
        return false;
    }
    percentile_unchecked(sorted_dist, tl) > cil_thres
}

fn success_fraction(sorted_dist: &[f64], cil_thres: f64) -> f64 {
    let hits = sorted_dist.partition_point(|&v| v <= cil_thres);
    hits as f64 / sorted_dist.len() as f64
}

impl SessionState {
    pub fn new(prior: NormalGammaParams, seed: u64) -> Result<Self> {
        prior.validate()?;
        Ok(Self {
            prior,
            observations: Vec::new(),
            summary: DataSummary::EMPTY,
            posterior: prior,
            trajectory: Vec::new(),
            table: CalibrationTable::default(),
            status: Status::Running,
            seed,
            last_decision: None,
            cached_dist: None,
        })
    }

    pub fn i(&self) -> usize {
        self.summary.count
    }

    pub fn is_stopped(&self) -> bool {
        matches!(self.status, Status::Stopped { .. })
    }

    pub fn step(&mut self, new_obs: &[f64], cfg: &StoppingConfig) -> Result<Decision> {
        self.step_with(new_obs, cfg, Execution::Sequential)
    }

    /// Ingests one batch and returns the verdict. Errors leave the state
    /// untouched.
    pub fn step_with(&mut self, new_obs: &[f64], cfg: &StoppingConfig, exec: Execution) -> Result<Decision> {
        if let Status::Stopped { decision } = &self.status {
            return Err(Error::SessionStopped(decision.kind.label().to_string()));
        }
        if new_obs.is_empty() {
            return Err(Error::Empty("observations"));
        }
        if let Some(bad) = new_obs.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid("observations", format!("non-finite value {bad}")));
        }
        if self.i() + new_obs.len() > cfg.n_max {
            return Err(Error::Precondition(format!(
                "{} observations would exceed n_max = {} (i = {})",
                new_obs.len(),
                cfg.n_max,
                self.i()
            )));
        }

        let upper = 0.5 * (1.0 + cfg.coverage);
        let mut t_i = f64::NAN;
        for &x in new_obs {
            self.summary.push(x);
            self.observations.push(x);
            self.posterior = posterior_update(&self.prior, &self.summary);
            t_i = cil_from_quantile(&self.posterior, cached_t_quantile(upper, self.posterior.v_scale)?);
            self.table.record_realized(self.summary.count, t_i);
        }
        let i = self.i();
        self.trajectory.push((i, t_i));

        let decision = if bos_check(t_i, cfg.cil_thres) {
            self.decide(i, DecisionKind::StopTargetReached, t_i, None)
        } else if i >= cfg.n_max {
            // Success was checked first, so the cap is only hit unmet here.
            let target_met = bos_check(t_i, cfg.cil_thres);
            self.decide(i, DecisionKind::StopAtMax { target_met }, t_i, None)
        } else if i >= cfg.n_min {
            let diag = self.rehearse(i, t_i, cfg, exec)?;
            let kind = if futility_check(self.cached_dist.as_deref().unwrap_or(&[]), cfg.tl, cfg.cil_thres) {
                DecisionKind::StopFutility
            } else {
                DecisionKind::Continue
            };
            self.decide(i, kind, t_i, Some(diag))
        } else {
            self.decide(i, DecisionKind::Continue, t_i, None)
        };
        Ok(decision)
    }

    fn rehearse(&mut self, i: usize, t_i: f64, cfg: &StoppingConfig, exec: Execution) -> Result<Diagnostics> {
        let seed = rng::derive_seed(self.seed, &[i as u64]);
        let dist = run_rehearsal_with(&self.posterior, &self.prior, &cfg.rehearsal, seed, exec)?;
        self.table
            .push_row(CalibrationTable::row_from_rehearsal(i, t_i, &dist.sizes, &dist.cils));
        let fit = fit_regression(&self.table, cfg.reg_min_i, cfg.pairing);
        let raw = dist.largest();
        let (calibrated, ok) = calibrate_distribution(&fit, raw, i, cfg.n_max);
        let diag = Diagnostics {
            tl_cil_at_nmax: percentile_unchecked(&calibrated, cfg.tl),
            calibrated: ok,
            success_prob: success_fraction(&calibrated, cfg.cil_thres),
            raw_median: median_sorted(raw),
            distribution: DistSummary::of(&calibrated, cfg.tl),
            fit,
        };
        self.cached_dist = Some(calibrated);
        Ok(diag)
    }

    fn decide(&mut self, i: usize, kind: DecisionKind, t_i: f64, diagnostics: Option<Diagnostics>) -> Decision {
        let d = Decision {
            i,
            kind,
            t_i,
            diagnostics,
        };
        if kind.is_stop() {
            self.status = Status::Stopped { decision: d.clone() };
        }
        self.last_decision = Some(d.clone());
        d
    }

    /// Re-evaluates the futility verdict from the cached distribution under
    /// different settings. Never mutates the session or consumes randomness.
    pub fn what_if(&self, cfg: &StoppingConfig, overrides: WhatIf) -> Result<Decision> {
        let Some(dist) = self.cached_dist.as_deref() else {
            return Err(Error::Precondition(format!(
                "no rehearsal yet: requires i >= n_min = {} (i = {})",
                cfg.n_min,
                self.i()
            )));
        };
        let tl = overrides.tl.unwrap_or(cfg.tl);
        let thres = overrides.cil_thres.unwrap_or(cfg.cil_thres);
        if !(0.0..=1.0).contains(&tl) {
            return Err(Error::invalid("tl", format!("must lie in [0, 1], got {tl}")));
        }
        if !(thres > 0.0) {
            return Err(Error::invalid("cil_thres", format!("must be > 0, got {thres}")));
        }
        let last = self.last_decision.as_ref();
        let base = last.and_then(|d| d.diagnostics.clone());
        let kind = if futility_check(dist, tl, thres) {
            DecisionKind::StopFutility
        } else {
            DecisionKind::Continue
        };
        Ok(Decision {
            i: self.i(),
            kind,
            t_i: last.map_or(f64::NAN, |d| d.t_i),
            diagnostics: Some(Diagnostics {
                tl_cil_at_nmax: percentile_unchecked(dist, tl),
                calibrated: base.as_ref().is_some_and(|d| d.calibrated),
                success_prob: success_fraction(dist, thres),
                raw_median: base.as_ref().map_or(f64::NAN, |d| d.raw_median),
                distribution: DistSummary::of(dist, tl),
                fit: base.map_or(RegressionFit::unusable(0), |d| d.fit),
            }),
        })
    }
}

/// Final record of one replayed experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub kind: DecisionKind,
    pub samples_used: usize,
    pub trajectory: Vec<(usize, f64)>,
    pub t_final: f64,
    pub success_prob_at_stop: Option<f64>,
    pub calibrated_at_stop: bool,
    /// R² of the latest usable regression fit, if any.
    pub r_squared: Option<f64>,
}

impl ExperimentOutcome {
    fn from_decision(d: &Decision, trajectory: &[(usize, f64)], r_squared: Option<f64>) -> Self {
        Self {
            kind: d.kind,
            samples_used: d.i,
            trajectory: trajectory.to_vec(),
            t_final: d.t_i,
            success_prob_at_stop: d.diagnostics.as_ref().map(|g| g.success_prob),
            calibrated_at_stop: d.diagnostics.as_ref().is_some_and(|g| g.calibrated),
            r_squared,
        }
    }
}

fn check_data(data: &[f64], cfg: &StoppingConfig) -> Result<()> {
    cfg.validate()?;
    if data.len() != cfg.n_max {
        return Err(Error::invalid(
            "data",
            format!("expected exactly n_max = {} values, got {}", cfg.n_max, data.len()),
        ));
    }
    Ok(())
}

fn latest_r2(d: &Decision, acc: &mut Option<f64>) {
    if let Some(g) = &d.diagnostics {
        if g.fit.usable {
            *acc = Some(g.fit.r_squared);
        }
    }
}

/// Replays a pre-drawn dataset through [`SessionState::step`] in batches
/// until a stop. The session seed is one `u64` drawn from `rng`.
pub fn run_experiment<R: RngCore + ?Sized>(
    data: &[f64],
    cfg: &StoppingConfig,
    prior: &NormalGammaParams,
    rng: &mut R,
) -> Result<ExperimentOutcome> {
    run_experiment_seeded(data, cfg, prior, rng.next_u64())
}

pub fn run_experiment_seeded(
    data: &[f64],
    cfg: &StoppingConfig,
    prior: &NormalGammaParams,
    seed: u64,
) -> Result<ExperimentOutcome> {
    check_data(data, cfg)?;
    let mut state = SessionState::new(*prior, seed)?;
    let mut r2 = None;
    for chunk in data.chunks(cfg.batch) {
        let d = state.step(chunk, cfg)?;
        latest_r2(&d, &mut r2);
        if d.kind.is_stop() {
            return Ok(ExperimentOutcome::from_decision(&d, &state.trajectory, r2));
        }
    }
    unreachable!("the n_max check stops every experiment")
}

/// Plain BOS with no rehearsal machinery at all, for equivalence checks.
pub fn run_bos_reference(data: &[f64], cfg: &StoppingConfig, prior: &NormalGammaParams) -> Result<ExperimentOutcome> {
    check_data(data, cfg)?;
    prior.validate()?;
    let upper = 0.5 * (1.0 + cfg.coverage);
    let mut summary = DataSummary::EMPTY;
    let mut trajectory = Vec::new();
    for chunk in data.chunks(cfg.batch) {
        let mut t = f64::NAN;
        for &x in chunk {
            summary.push(x);
            let post = posterior_update(prior, &summary);
            t = cil_from_quantile(&post, cached_t_quantile(upper, post.v_scale)?);
        }
        let i = summary.count;
        trajectory.push((i, t));
        let kind = if t <= cfg.cil_thres {
            DecisionKind::StopTargetReached
        } else if i >= cfg.n_max {
            DecisionKind::StopAtMax { target_met: false }
        } else {
            continue;
        };
        return Ok(ExperimentOutcome {
            kind,
            samples_used: i,
            trajectory,
            t_final: t,
            success_prob_at_stop: None,
            calibrated_at_stop: false,
            r_squared: None,
        });
    }
    unreachable!("the n_max check stops every experiment")
}

/// Runs one experiment per tolerance level on the same dataset and session
/// seed, sharing a single trajectory. Rehearsals and the calibration table
/// do not depend on `tl`, so every lane is identical to a separate
/// [`run_experiment_seeded`] call with that `tl`.
pub fn run_tl_sweep(
    data: &[f64],
    cfg: &StoppingConfig,
    tls: &[f64],
    prior: &NormalGammaParams,
    seed: u64,
) -> Result<Vec<ExperimentOutcome>> {
    check_data(data, cfg)?;
    for &tl in tls {
        StoppingConfig { tl, ..cfg.clone() }.validate()?;
    }
    let shared = StoppingConfig { tl: 0.0, ..cfg.clone() };
    let mut state = SessionState::new(*prior, seed)?;
    let mut lanes: Vec<Option<ExperimentOutcome>> = vec![None; tls.len()];
    let mut r2 = None;
    for chunk in data.chunks(cfg.batch) {
        let d = state.step(chunk, &shared)?;
        latest_r2(&d, &mut r2);
        for (lane, &tl) in lanes.iter_mut().zip(tls) {
            if lane.is_some() {
                continue;
            }
            let futile = d.diagnostics.is_some()
                && futility_check(state.cached_dist.as_deref().unwrap_or(&[]), tl, cfg.cil_thres);
            if d.kind.is_stop() {
                *lane = Some(ExperimentOutcome::from_decision(&d, &state.trajectory, r2));
            } else if futile {
                let stop = Decision {
                    kind: DecisionKind::StopFutility,
                    ..d.clone()
                };
                *lane = Some(ExperimentOutcome::from_decision(&stop, &state.trajectory, r2));
            }
        }
        if lanes.iter().all(Option::is_some) {
            break;
        }
    }
    Ok(lanes.into_iter().map(|l| l.expect("every lane stops by n_max")).collect())
}
