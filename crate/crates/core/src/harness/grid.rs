// SPDX-License-Identifier: MIT OR Apache-2.0

//! Prior × target × `n_min` grid. Each cell replays `replicates` pre-drawn
//! datasets through every tolerance level and through plain BOS.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{CilTarget, ScenarioConfig};
use super::{median, write_json, HarnessError};
use crate::conjugate::{fill_samples, NormalGammaParams};
use crate::evaluation::{
    auc, classify, cil_threshold_with, cost_benefit_ratio, frequentist_sample_size, ground_truth,
    ConfusionCounts, CostBenefitInputs,
};
use crate::par::Execution;
use crate::rehearsal::RehearsalConfig;
use crate::rng;
use crate::stopping::{run_bos_reference, run_tl_sweep, DecisionKind, ExperimentOutcome, StoppingConfig};

/// One row of `experiments.csv`; field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub cell_id: usize,
    pub prior_name: String,
    pub cil_target: f64,
    pub cil_target_pct: Option<f64>,
    pub tl: f64,
    pub n_min: usize,
    pub n_max: usize,
    pub replicate: usize,
    pub method: String,
    pub decision: String,
    pub samples_used: usize,
    pub truth: bool,
    pub t_final: f64,
    pub success_prob_at_stop: Option<f64>,
    pub calibrated_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TlSummary {
    pub tl: f64,
    pub confusion: ConfusionCounts,
    pub successes: u64,
    pub samples: u64,
    pub futility_stops: u64,
    /// Relative cost benefit over BOS; `None` when BOS never succeeded.
    pub cost_benefit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTotals {
    pub successes: u64,
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedSampleSummary {
    /// The fixed design always collects `n_max` samples.
    pub n: usize,
    /// Frequentist sample size for `E = cil_target` and the data-model sigma.
    pub eq1_n: u64,
    pub successes: u64,
    pub samples: u64,
    pub cost_benefit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell_id: usize,
    pub prior_name: String,
    pub cil_target: f64,
    pub cil_target_pct: Option<f64>,
    pub n_min: usize,
    pub n_max: usize,
    pub replicates: usize,
    pub truth_count: u64,
    pub per_tl: Vec<TlSummary>,
    pub bos: MethodTotals,
    pub fixed_sample: FixedSampleSummary,
    pub roc: Vec<(f64, f64)>,
    pub auc: f64,
    /// Median over pBOS experiments of the last usable fit's R².
    pub r2_median: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub seed: u64,
    pub replicates: usize,
    pub m: usize,
    pub n_max: usize,
    pub cells: Vec<CellSummary>,
    pub r2_median: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutput {
    pub records: Vec<ExperimentRecord>,
    pub summary: GridSummary,
    /// Per-experiment R² aligned with the pBOS entries of `records`.
    r2: Vec<Option<f64>>,
}

struct Replicate {
    truth: bool,
    lanes: Vec<ExperimentOutcome>,
    bos: ExperimentOutcome,
}

fn is_success(kind: DecisionKind) -> bool {
    matches!(kind, DecisionKind::StopTargetReached | DecisionKind::StopAtMax { target_met: true })
}

fn ratio(p_b: u64, p_c: u64, b_b: u64, b_c: u64) -> Option<f64> {
    cost_benefit_ratio(&CostBenefitInputs {
        n_pbos_b: p_b as f64,
        n_bos_b: b_b as f64,
        n_pbos_c: p_c as f64,
        n_bos_c: b_c as f64,
    })
    .ok()
}

/// Runs the whole grid in memory.
pub fn run_grid(cfg: &ScenarioConfig, exec: Execution) -> Result<GridOutput, HarnessError> {
    cfg.validate()?;
    let priors: Vec<(String, NormalGammaParams)> = cfg
        .priors
        .iter()
        .map(|p| Ok((p.name().to_string(), p.resolve()?)))
        .collect::<Result<_, HarnessError>>()?;
    let model = cfg.data_model.as_draw();

    let mut records = Vec::new();
    let mut r2_all = Vec::new();
    let mut cells = Vec::new();
    let mut cell_id = 0;
    for (pi, (prior_name, prior)) in priors.iter().enumerate() {
        for (ti, target) in cfg.cil_targets.iter().enumerate() {
            let (thres, pct) = match *target {
                CilTarget::Absolute(a) => (a, None),
                CilTarget::Percentile(p) => {
                    let seed = rng::derive_seed(cfg.seed, &[3, pi as u64, ti as u64]);
                    let t = cil_threshold_with(prior, &model, cfg.n_max, p, cfg.threshold_reps, cfg.coverage, seed, exec)?;
                    (t, Some(p))
                }
            };
            for &n_min in &cfg.n_min {
                let stop_cfg = StoppingConfig {
                    cil_thres: thres,
                    coverage: cfg.coverage,
                    tl: 0.0,
                    n_min,
                    n_max: cfg.n_max,
                    batch: cfg.batch,
                    rehearsal: RehearsalConfig::full(cfg.m, cfg.n_max, cfg.coverage),
                    reg_min_i: cfg.reg_min_i,
                    pairing: cfg.pairing,
                };
                stop_cfg.validate()?;
                let id = cell_id as u64;
                let reps = exec.map_indexed(cfg.replicates, |r| -> crate::Result<Replicate> {
                    let mut stream = rng::stream(cfg.seed, &[1, id, r as u64]);
                    let mut data = Vec::with_capacity(cfg.n_max);
                    fill_samples(&model, &mut data, cfg.n_max, &mut stream);
                    let session_seed = rng::derive_seed(cfg.seed, &[2, id, r as u64]);
                    Ok(Replicate {
                        truth: ground_truth(&data, prior, thres, cfg.coverage)?,
                        lanes: run_tl_sweep(&data, &stop_cfg, &cfg.tl_grid, prior, session_seed)?,
                        bos: run_bos_reference(&data, &stop_cfg, prior)?,
                    })
                });
                let reps = reps.into_iter().collect::<crate::Result<Vec<_>>>()?;

                let record = |r: usize, tl: f64, method: &str, o: &ExperimentOutcome, truth: bool| ExperimentRecord {
                    cell_id,
                    prior_name: prior_name.clone(),
                    cil_target: thres,
                    cil_target_pct: pct,
                    tl,
                    n_min,
                    n_max: cfg.n_max,
                    replicate: r,
                    method: method.to_string(),
                    decision: o.kind.label().to_string(),
                    samples_used: o.samples_used,
                    truth,
                    t_final: o.t_final,
                    success_prob_at_stop: o.success_prob_at_stop,
                    calibrated_flag: o.calibrated_at_stop,
                };
                let mut cell_r2 = Vec::new();
                for (r, rep) in reps.iter().enumerate() {
                    for (o, &tl) in rep.lanes.iter().zip(&cfg.tl_grid) {
                        records.push(record(r, tl, "pbos", o, rep.truth));
                        r2_all.push(o.r_squared);
                        cell_r2.extend(o.r_squared);
                    }
                    records.push(record(r, 0.0, "bos", &rep.bos, rep.truth));
                    r2_all.push(None);
                }
                cells.push(summarise_cell(cfg, cell_id, prior_name, thres, pct, n_min, &reps, &cell_r2));
                cell_id += 1;
            }
        }
    }
    let all_r2: Vec<f64> = r2_all.iter().flatten().copied().collect();
    Ok(GridOutput {
        records,
        summary: GridSummary {
            seed: cfg.seed,
            replicates: cfg.replicates,
            m: cfg.m,
            n_max: cfg.n_max,
            cells,
            r2_median: median(&all_r2),
        },
        r2: r2_all,
    })
}

#[allow(clippy::too_many_arguments)]
fn summarise_cell(
    cfg: &ScenarioConfig,
    cell_id: usize,
    prior_name: &str,
    thres: f64,
    pct: Option<f64>,
    n_min: usize,
    reps: &[Replicate],
    r2: &[f64],
) -> CellSummary {
    let bos = MethodTotals {
        successes: reps.iter().filter(|r| is_success(r.bos.kind)).count() as u64,
        samples: reps.iter().map(|r| r.bos.samples_used as u64).sum(),
    };
    let per_tl: Vec<TlSummary> = cfg
        .tl_grid
        .iter()
        .enumerate()
        .map(|(j, &tl)| {
            let mut confusion = ConfusionCounts::default();
            let (mut successes, mut samples, mut futility_stops) = (0, 0, 0);
            for rep in reps {
                let o = &rep.lanes[j];
                confusion.add(classify(o.kind, rep.truth));
                successes += is_success(o.kind) as u64;
                samples += o.samples_used as u64;
                futility_stops += (o.kind == DecisionKind::StopFutility) as u64;
            }
            TlSummary {
                tl,
                confusion,
                successes,
                samples,
                futility_stops,
                cost_benefit: ratio(successes, samples, bos.successes, bos.samples),
            }
        })
        .collect();
    let counts: Vec<ConfusionCounts> = per_tl.iter().map(|t| t.confusion).collect();
    let roc = crate::evaluation::roc_curve(&counts);
    let area = auc(&roc).expect("roc_curve output is sorted with both corners");

    let truth_count = reps.iter().filter(|r| r.truth).count() as u64;
    let fixed_samples = (reps.len() * cfg.n_max) as u64;
    let fixed_sample = FixedSampleSummary {
        n: cfg.n_max,
        eq1_n: frequentist_sample_size(1.96, cfg.data_model.variance.sqrt(), thres).unwrap_or(0),
        successes: truth_count,
        samples: fixed_samples,
        cost_benefit: ratio(truth_count, fixed_samples, bos.successes, bos.samples),
    };
    CellSummary {
        cell_id,
        prior_name: prior_name.to_string(),
        cil_target: thres,
        cil_target_pct: pct,
        n_min,
        n_max: cfg.n_max,
        replicates: reps.len(),
        truth_count,
        per_tl,
        bos,
        fixed_sample,
        roc,
        auc: area,
        r2_median: median(r2),
    }
}

impl GridOutput {
    /// Per-experiment R² of the latest usable fit, aligned with `records`.
    pub fn r_squared(&self) -> &[Option<f64>] {
        &self.r2
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `experiments.csv` and `summary.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join("experiments.csv"))?)?;
        write_json(&dir.join("summary.json"), &self.summary)
    }
}
