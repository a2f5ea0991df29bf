// SPDX-License-Identifier: MIT OR Apache-2.0

//! Forward-collision-warning case study: driver reaction times (log
//! seconds) modelled as N(-0.054, 0.415²).
//!
//! Many synthetic groups of 50 drivers are generated and split into those
//! whose full-length posterior CIL would reach the target and those that
//! would not. An equal number of each is resampled, both classes are run
//! through pBOS and BOS, and the cost benefit is re-weighted to the
//! population share of each class.

use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{write_json, HarnessError};
use crate::conjugate::{fill_samples, ModelDraw, NormalGammaParams};
use crate::evaluation::{cost_benefit_ratio, ground_truth, CostBenefitInputs};
use crate::par::Execution;
use crate::rng;
use crate::stopping::{run_bos_reference, run_experiment_seeded, DecisionKind, ExperimentOutcome, StoppingConfig};

pub const FCW_MEAN: f64 = -0.054;
pub const FCW_SD: f64 = 0.415;
pub const DESK_GROUPS: usize = 10_000;
pub const FULL_GROUPS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FcwPreset {
    /// Prior location 1.5 and target 0.30 taken at face value.
    Literal,
    /// Prior location ln 1.5 and target ln 1.65 − ln 1.35.
    LogSpace,
}

impl FcwPreset {
    pub fn prior(self) -> NormalGammaParams {
        let mu = match self {
            FcwPreset::Literal => 1.5,
            FcwPreset::LogSpace => 1.5f64.ln(),
        };
        NormalGammaParams {
            mu,
            n_scale: 5.0,
            var_param: 0.5,
            v_scale: 1.0,
        }
    }

    pub fn cil_thres(self) -> f64 {
        match self {
            FcwPreset::Literal => 0.30,
            FcwPreset::LogSpace => 1.65f64.ln() - 1.35f64.ln(),
        }
    }
}

/// Class weights `(reach, non_reach)` for the balanced sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FcwWeights {
    Fixed { reach: f64, non_reach: f64 },
    /// Use the reach probability measured over all groups.
    Measured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FcwConfig {
    pub preset: FcwPreset,
    pub groups: usize,
    pub per_class: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub tl: f64,
    pub m: usize,
    pub seed: u64,
    pub weights: FcwWeights,
}

impl Default for FcwConfig {
    fn default() -> Self {
        Self {
            preset: FcwPreset::Literal,
            groups: DESK_GROUPS,
            per_class: 100,
            n_min: 10,
            n_max: 50,
            tl: 0.4,
            m: crate::rehearsal::DEFAULT_M,
            seed: 0,
            weights: FcwWeights::Fixed {
                reach: 0.08,
                non_reach: 0.92,
            },
        }
    }
}

impl FcwConfig {
    /// Missing keys take their defaults.
    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn stopping(&self) -> StoppingConfig {
        StoppingConfig::new(self.preset.cil_thres(), self.tl, self.n_min, self.n_max).with_m(self.m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcwRecord {
    pub group: usize,
    pub reach: bool,
    pub method: String,
    pub decision: String,
    pub samples_used: usize,
    pub t_final: f64,
    pub success_prob_at_stop: Option<f64>,
    pub calibrated_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTotals {
    pub groups: usize,
    pub pbos_successes: u64,
    pub pbos_samples: u64,
    pub bos_successes: u64,
    pub bos_samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcwSummary {
    pub preset: FcwPreset,
    pub cil_thres: f64,
    pub prior: NormalGammaParams,
    pub seed: u64,
    pub groups: usize,
    pub reach_groups: usize,
    pub reach_probability: f64,
    pub weights: (f64, f64),
    pub reach: ClassTotals,
    pub non_reach: ClassTotals,
    /// Class-weighted relative cost benefit of pBOS over BOS.
    pub weighted_cost_benefit: Option<f64>,
    pub unweighted_cost_benefit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcwOutput {
    pub records: Vec<FcwRecord>,
    pub summary: FcwSummary,
}

fn group_data(seed: u64, g: usize, n: usize) -> Vec<f64> {
    let model = ModelDraw {
        mean: FCW_MEAN,
        variance: FCW_SD * FCW_SD,
    };
    let mut out = Vec::with_capacity(n);
    fill_samples(&model, &mut out, n, &mut rng::stream(seed, &[1, g as u64]));
    out
}

fn success(o: &ExperimentOutcome) -> bool {
    matches!(o.kind, DecisionKind::StopTargetReached | DecisionKind::StopAtMax { target_met: true })
}

pub fn run_fcw(cfg: &FcwConfig, exec: Execution) -> Result<FcwOutput, HarnessError> {
    let stop = cfg.stopping();
    stop.validate()?;
    if cfg.groups < 1 || cfg.per_class < 1 {
        return Err(HarnessError::Config("groups and per_class must be >= 1".into()));
    }
    let prior = cfg.preset.prior();
    let thres = cfg.preset.cil_thres();

    let truths = exec.map_indexed(cfg.groups, |g| ground_truth(&group_data(cfg.seed, g, cfg.n_max), &prior, thres, stop.coverage));
    let truths = truths.into_iter().collect::<crate::Result<Vec<_>>>()?;
    let reach: Vec<usize> = (0..cfg.groups).filter(|&g| truths[g]).collect();
    let non_reach: Vec<usize> = (0..cfg.groups).filter(|&g| !truths[g]).collect();
    let p = reach.len() as f64 / cfg.groups as f64;
    if reach.len() < cfg.per_class || non_reach.len() < cfg.per_class {
        return Err(HarnessError::InsufficientGroups {
            reach: reach.len(),
            non_reach: non_reach.len(),
            needed: cfg.per_class,
            reach_probability: p,
        });
    }

    let mut pick_rng = rng::stream(cfg.seed, &[2]);
    let mut pick = |pool: &[usize]| {
        let mut chosen: Vec<usize> = index::sample(&mut pick_rng, pool.len(), cfg.per_class)
            .into_iter()
            .map(|j| pool[j])
            .collect();
        chosen.sort_unstable();
        chosen
    };
    let selected: Vec<(usize, bool)> = pick(&reach)
        .into_iter()
        .map(|g| (g, true))
        .chain(pick(&non_reach).into_iter().map(|g| (g, false)))
        .collect();

    let runs = exec.map_indexed(selected.len(), |j| -> crate::Result<_> {
        let (g, _) = selected[j];
        let data = group_data(cfg.seed, g, cfg.n_max);
        let seed = rng::derive_seed(cfg.seed, &[3, g as u64]);
        Ok((
            run_experiment_seeded(&data, &stop, &prior, seed)?,
            run_bos_reference(&data, &stop, &prior)?,
        ))
    });
    let runs = runs.into_iter().collect::<crate::Result<Vec<_>>>()?;

    let mut records = Vec::with_capacity(2 * runs.len());
    let mut totals = [
        ClassTotals { groups: 0, pbos_successes: 0, pbos_samples: 0, bos_successes: 0, bos_samples: 0 },
        ClassTotals { groups: 0, pbos_successes: 0, pbos_samples: 0, bos_successes: 0, bos_samples: 0 },
    ];
    for (&(g, is_reach), (p_out, b_out)) in selected.iter().zip(&runs) {
        let t = &mut totals[usize::from(!is_reach)];
        t.groups += 1;
        t.pbos_successes += success(p_out) as u64;
        t.pbos_samples += p_out.samples_used as u64;
        t.bos_successes += success(b_out) as u64;
        t.bos_samples += b_out.samples_used as u64;
        for (method, o) in [("pbos", p_out), ("bos", b_out)] {
            records.push(FcwRecord {
                group: g,
                reach: is_reach,
                method: method.into(),
                decision: o.kind.label().into(),
                samples_used: o.samples_used,
                t_final: o.t_final,
                success_prob_at_stop: o.success_prob_at_stop,
                calibrated_flag: o.calibrated_at_stop,
            });
        }
    }

    let weights = match cfg.weights {
        FcwWeights::Fixed { reach, non_reach } => (reach, non_reach),
        FcwWeights::Measured => (p, 1.0 - p),
    };
    let [r, n] = &totals;
    let weighted = |wr: f64, wn: f64| {
        cost_benefit_ratio(&CostBenefitInputs {
            n_pbos_b: wr * r.pbos_successes as f64 + wn * n.pbos_successes as f64,
            n_bos_b: wr * r.bos_successes as f64 + wn * n.bos_successes as f64,
            n_pbos_c: wr * r.pbos_samples as f64 + wn * n.pbos_samples as f64,
            n_bos_c: wr * r.bos_samples as f64 + wn * n.bos_samples as f64,
        })
        .ok()
    };
    let summary = FcwSummary {
        preset: cfg.preset,
        cil_thres: thres,
        prior,
        seed: cfg.seed,
        groups: cfg.groups,
        reach_groups: reach.len(),
        reach_probability: p,
        weights,
        weighted_cost_benefit: weighted(weights.0, weights.1),
        unweighted_cost_benefit: weighted(1.0, 1.0),
        reach: totals[0].clone(),
        non_reach: totals[1].clone(),
    };
    Ok(FcwOutput { records, summary })
}

impl FcwOutput {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `fcw_experiments.csv` and `fcw_summary.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join("fcw_experiments.csv"))?)?;
        write_json(&dir.join("fcw_summary.json"), &self.summary)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_defaults_and_unknown_keys() {
        let c = FcwConfig::from_toml_str("preset = \"log_space\"\ngroups = 500").unwrap();
        assert_eq!(c.preset, FcwPreset::LogSpace);
        assert_eq!(c.tl, 0.4);
        assert!(FcwConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn presets() {
        let p = FcwPreset::Literal.prior();
        assert_eq!((p.mu, p.n_scale, p.var_param, p.v_scale), (1.5, 5.0, 0.5, 1.0));
        assert_eq!(FcwPreset::Literal.cil_thres(), 0.30);
        assert!((FcwPreset::LogSpace.cil_thres() - 0.2007).abs() < 1e-4);
        let c = FcwConfig::default();
        assert_eq!((c.tl, c.n_min, c.n_max, c.per_class), (0.4, 10, 50, 100));
    }

    #[test]
    fn weights_give_effective_counts() {
        // 100 + 100 balanced groups at (0.08, 0.92) weigh like 8 + 92.
        let (wr, wn) = (0.08, 0.92);
        assert!((100.0 * wr - 8.0f64).abs() < 1e-12);
        assert!((100.0 * wn - 92.0f64).abs() < 1e-12);
    }

    #[test]
    fn small_run_is_reproducible() {
        let cfg = FcwConfig {
            preset: FcwPreset::LogSpace,
            groups: 2000,
            per_class: 5,
            m: 20,
            seed: 11,
            ..FcwConfig::default()
        };
        let a = run_fcw(&cfg, Execution::Sequential).unwrap();
        let b = run_fcw(&cfg, Execution::available_parallel()).unwrap();
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.records, b.records);
        assert_eq!(a.records.len(), 20);
        assert!(a.summary.reach_probability > 0.0);
    }

    #[test]
    fn too_few_groups_aborts() {
        let cfg = FcwConfig {
            groups: 50,
            m: 20,
            ..FcwConfig::default()
        };
        assert!(matches!(
            run_fcw(&cfg, Execution::Sequential),
            Err(HarnessError::InsufficientGroups { .. })
        ));
    }
}
