// SPDX-License-Identifier: MIT OR Apache-2.0

//! Scenario runners: the simulation grid and the collision-warning case
//! study, with seeded determinism and file output.
//!
//! Every random stream is derived from the master seed and an index path,
//! so results do not depend on execution order or thread count.

pub mod config;
pub mod fcw;
pub mod grid;

pub use config::{named_prior, CilTarget, DataModel, PriorSpec, ScenarioConfig, REFERENCE_PRIORS};
pub use fcw::{run_fcw, FcwConfig, FcwOutput, FcwPreset};
pub use grid::{run_grid, ExperimentRecord, GridOutput, GridSummary};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] crate::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(
        "not enough groups for a balanced resample: {reach} reach / {non_reach} non-reach, \
         need {needed} each (reach probability {reach_probability})"
    )]
    InsufficientGroups {
        reach: usize,
        non_reach: usize,
        needed: usize,
        reach_probability: f64,
    },
}

/// Median of an unsorted sample; `None` when empty.
pub(crate) fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(crate::rehearsal::median_sorted(&v))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &std::path::Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
