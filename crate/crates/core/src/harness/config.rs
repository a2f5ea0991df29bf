// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::calibration::{Pairing, DEFAULT_REG_MIN_I};
use crate::conjugate::{ModelDraw, NormalGammaParams};
use crate::rehearsal::DEFAULT_M;
use crate::stopping::DEFAULT_COVERAGE;

/// The five reference priors as `(name, mu, n_scale, var_param, v_scale)`.
pub const REFERENCE_PRIORS: [(&str, f64, f64, f64, f64); 5] = [
    ("central_informative", 0.0, 10.0, 1.0, 10.0),
    ("central_weakly_informative", 0.0, 5.0, 10.0, 1.0),
    ("offset_weakly_informative", 1.0, 5.0, 10.0, 1.0),
    ("offset_informative", 5.0, 10.0, 1.0, 10.0),
    ("flat", 0.0, 1.0, 20.0, 1.0),
];

pub const REFERENCE_PERCENTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];
pub const REFERENCE_N_MIN: [usize; 3] = [10, 20, 30];
pub const DESK_REPLICATES: usize = 200;
pub const FULL_REPLICATES: usize = 500;

pub fn named_prior(name: &str) -> Option<NormalGammaParams> {
    REFERENCE_PRIORS
        .iter()
        .find(|p| p.0 == name)
        .map(|&(_, mu, n, var, v)| NormalGammaParams {
            mu,
            n_scale: n,
            var_param: var,
            v_scale: v,
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataModel {
    pub mean: f64,
    pub variance: f64,
}

impl Default for DataModel {
    fn default() -> Self {
        Self {
            mean: 0.0,
            variance: 1.0,
        }
    }
}

impl DataModel {
    pub fn as_draw(&self) -> ModelDraw {
        ModelDraw {
            mean: self.mean,
            variance: self.variance,
        }
    }
}

/// A reference prior by name, or explicit parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriorSpec {
    Named(String),
    Custom {
        name: String,
        mu: f64,
        n_scale: f64,
        var_param: f64,
        v_scale: f64,
    },
}

impl PriorSpec {
    pub fn name(&self) -> &str {
        match self {
            PriorSpec::Named(n) | PriorSpec::Custom { name: n, .. } => n,
        }
    }

    pub fn resolve(&self) -> Result<NormalGammaParams, HarnessError> {
        let p = match self {
            PriorSpec::Named(n) => {
                named_prior(n).ok_or_else(|| HarnessError::Config(format!("unknown prior name `{n}`")))?
            }
            PriorSpec::Custom {
                mu,
                n_scale,
                var_param,
                v_scale,
                ..
            } => NormalGammaParams {
                mu: *mu,
                n_scale: *n_scale,
                var_param: *var_param,
                v_scale: *v_scale,
            },
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CilTarget {
    /// Percentile of the true-data posterior CIL distribution at `n_max`.
    Percentile(f64),
    Absolute(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub data_model: DataModel,
    #[serde(default = "default_priors")]
    pub priors: Vec<PriorSpec>,
    #[serde(default = "default_targets")]
    pub cil_targets: Vec<CilTarget>,
    #[serde(default = "default_tl_grid")]
    pub tl_grid: Vec<f64>,
    #[serde(default = "default_n_min")]
    pub n_min: Vec<usize>,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Datasets used to turn a percentile target into a CIL.
    #[serde(default = "default_threshold_reps")]
    pub threshold_reps: usize,
    #[serde(default = "default_coverage")]
    pub coverage: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_reg_min_i")]
    pub reg_min_i: usize,
    #[serde(default)]
    pub pairing: Pairing,
    /// Require named priors to carry their reference values.
    #[serde(default)]
    pub reference_priors_only: bool,
}

fn default_priors() -> Vec<PriorSpec> {
    REFERENCE_PRIORS.iter().map(|p| PriorSpec::Named(p.0.into())).collect()
}
fn default_targets() -> Vec<CilTarget> {
    REFERENCE_PERCENTILES.iter().map(|&p| CilTarget::Percentile(p)).collect()
}
fn default_tl_grid() -> Vec<f64> {
    (0..=10).map(|t| t as f64 / 10.0).collect()
}
fn default_n_min() -> Vec<usize> {
    REFERENCE_N_MIN.to_vec()
}
fn default_n_max() -> usize {
    50
}
fn default_replicates() -> usize {
    DESK_REPLICATES
}
fn default_m() -> usize {
    DEFAULT_M
}
fn default_threshold_reps() -> usize {
    10_000
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

impl Default for ScenarioConfig {
    /// The full reference grid at desk scale.
    fn default() -> Self {
        Self {
            data_model: DataModel::default(),
            priors: default_priors(),
            cil_targets: default_targets(),
            tl_grid: default_tl_grid(),
            n_min: default_n_min(),
            n_max: default_n_max(),
            replicates: default_replicates(),
            m: default_m(),
            seed: 0,
            out_dir: None,
            threshold_reps: default_threshold_reps(),
            coverage: default_coverage(),
            batch: default_batch(),
            reg_min_i: default_reg_min_i(),
            pairing: Pairing::default(),
            reference_priors_only: true,
        }
    }
}

impl ScenarioConfig {
    /// Reference grid at 500 replicates.
    pub fn full_scale() -> Self {
        Self {
            replicates: FULL_REPLICATES,
            ..Self::default()
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.replicates < 1 {
            return bad("replicates must be >= 1".into());
        }
        if self.priors.is_empty() || self.cil_targets.is_empty() || self.tl_grid.is_empty() || self.n_min.is_empty() {
            return bad("priors, cil_targets, tl_grid and n_min must be non-empty".into());
        }
        if !(self.data_model.variance > 0.0 && self.data_model.mean.is_finite()) {
            return bad("data_model needs a finite mean and variance > 0".into());
        }
        if let Some(tl) = self.tl_grid.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return bad(format!("tl_grid value {tl} outside [0, 1]"));
        }
        for t in &self.cil_targets {
            match *t {
                CilTarget::Percentile(p) if !(0.0..=1.0).contains(&p) => {
                    return bad(format!("percentile target {p} outside [0, 1]"))
                }
                CilTarget::Absolute(a) if !(a > 0.0) => return bad(format!("absolute target {a} must be > 0")),
                _ => {}
            }
        }
        if let Some(n) = self.n_min.iter().find(|&&n| n < 1 || n > self.n_max) {
            return bad(format!("n_min {n} must lie in 1..=n_max ({})", self.n_max));
        }
        if self.threshold_reps < 100 {
            return bad("threshold_reps must be >= 100".into());
        }
        for p in &self.priors {
            let resolved = p.resolve()?;
            if self.reference_priors_only {
                match named_prior(p.name()) {
                    Some(reference) if reference == resolved => {}
                    Some(_) => return bad(format!("prior `{}` differs from its reference values", p.name())),
                    None => return bad(format!("prior `{}` is not a reference prior", p.name())),
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_the_reference_grid() {
        let c = ScenarioConfig::default();
        c.validate().unwrap();
        assert_eq!(c.priors.len() * c.cil_targets.len() * c.tl_grid.len() * c.n_min.len(), 5 * 5 * 11 * 3);
        assert_eq!(ScenarioConfig::full_scale().replicates, 500);
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let text = r#"
            priors = ["flat", { name = "mine", mu = 0.5, n_scale = 2.0, var_param = 1.0, v_scale = 3.0 }]
            cil_targets = [{ percentile = 0.05 }, { absolute = 0.4 }]
            tl_grid = [0.0, 0.5]
            n_min = [10]
            replicates = 3
            seed = 9
        "#;
        let c = ScenarioConfig::from_toml_str(text).unwrap();
        assert_eq!(c.cil_targets[1], CilTarget::Absolute(0.4));
        assert_eq!(c.priors[1].resolve().unwrap().mu, 0.5);
        assert!(ScenarioConfig::from_toml_str("replicates = 3\nbogus = 1").is_err());
        assert!(ScenarioConfig::from_toml_str("priors = [\"nope\"]").is_err());
        assert!(ScenarioConfig::from_toml_str("tl_grid = [1.5]").is_err());
        let back = ScenarioConfig::from_toml_str(&toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn reproduction_flag_pins_reference_priors() {
        let text = r#"
            reference_priors_only = true
            priors = [{ name = "flat", mu = 0.0, n_scale = 1.0, var_param = 19.0, v_scale = 1.0 }]
        "#;
        assert!(ScenarioConfig::from_toml_str(text).is_err());
        let ok = "reference_priors_only = true\npriors = [\"flat\", \"offset_informative\"]";
        assert!(ScenarioConfig::from_toml_str(ok).is_ok());
    }
}
