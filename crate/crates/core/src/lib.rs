// SPDX-License-Identifier: MIT OR Apache-2.0

//! Predictive Bayesian optional stopping (pBOS) for precision targets.
//!
//! A sequential experiment collects samples from a normal data model and is
//! analysed under a normal-gamma conjugate prior. After every batch the engine
//! checks whether the credible interval length (CIL) of the mean has reached a
//! target. Once a minimum sample size is reached it also rehearses the rest of
//! the experiment: future datasets are simulated from the current posterior,
//! the predicted CIL distribution at the resource cap is bias-corrected with a
//! running regression, and the experiment is abandoned when the probability of
//! ever reaching the target falls below a tolerance level.
//!
//! Module map:
//!
//! - [`conjugate`]: posterior algebra, CIL, parameter and data sampling.
//! - [`rehearsal`]: simulated-future CIL distributions.
//! - [`calibration`]: regression table, fit and distribution shift.
//! - [`stopping`]: the per-step state machine and experiment replay.
//! - [`evaluation`]: ground truth, confusion counts, ROC/AUC, cost benefit.
//! - [`harness`]: scenario grids, the collision-warning case study, file output.

#![forbid(unsafe_code)]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod conjugate;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod par;
pub mod rehearsal;
pub mod rng;
pub mod stopping;

pub use calibration::{CalibrationRow, CalibrationTable, Pairing, RegressionFit};
pub use conjugate::{DataSummary, ModelDraw, NormalGammaParams};
pub use error::{Error, Result};
pub use rehearsal::{CilDistribution, RehearsalConfig};
pub use stopping::{Decision, DecisionKind, ExperimentOutcome, SessionState, StoppingConfig};
