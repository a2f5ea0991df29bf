// SPDX-License-Identifier: MIT OR Apache-2.0

//! Normal-gamma conjugate inference for a normal data model.
//!
//! The prior over the data mean `mu` and precision `phi` is
//!
//! ```text
//! phi      ~ Gamma(shape = v/2, scale = 2 / (v * var_param))
//! mu | phi ~ Normal(location, variance = 1 / (n_scale * phi))
//! ```
//!
//! The gamma is parameterised by *scale*, not rate, so that
//! `E[phi] = 1 / var_param`. Only sufficient statistics flow through the
//! update; raw samples never need to be kept for inference.

use std::collections::HashMap;
use std::sync::{OnceLock, RwLock};

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, StudentsT};
use statrs::function::beta;

use crate::error::{Error, Result};

/// Prior or posterior over (mean, variance) of a normal data model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalGammaParams {
    /// Location of the mean parameter.
    pub mu: f64,
    /// Pseudo sample size attached to the mean.
    pub n_scale: f64,
    /// Variance scale, in squared data units.
    pub var_param: f64,
    /// Pseudo sample size attached to the variance. At least one.
    pub v_scale: f64,
}

impl NormalGammaParams {
    pub fn new(mu: f64, n_scale: f64, var_param: f64, v_scale: f64) -> Result<Self> {
        let p = Self {
            mu,
            n_scale,
            var_param,
            v_scale,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::invalid("mu", format!("must be finite, got {}", self.mu)));
        }
        if !(self.n_scale.is_finite() && self.n_scale > 0.0) {
            return Err(Error::invalid(
                "n_scale",
                format!("must be finite and > 0, got {}", self.n_scale),
            ));
        }
        if !(self.var_param.is_finite() && self.var_param > 0.0) {
            return Err(Error::invalid(
                "var_param",
                format!("must be finite and > 0, got {}", self.var_param),
            ));
        }
        if !(self.v_scale.is_finite() && self.v_scale >= 1.0) {
            return Err(Error::invalid(
                "v_scale",
                format!("must be finite and >= 1, got {}", self.v_scale),
            ));
        }
        Ok(())
    }
}

/// Sufficient statistics of a sample: count, mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DataSummary {
    pub count: usize,
    /// Zero when `count == 0`.
    pub mean: f64,
    /// `(count - 1) * s^2`; never negative.
    pub sum_sq_dev: f64,
}

impl DataSummary {
    pub const EMPTY: DataSummary = DataSummary {
        count: 0,
        mean: 0.0,
        sum_sq_dev: 0.0,
    };

    /// Welford update with one observation.
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.sum_sq_dev += delta * (x - self.mean);
        if self.sum_sq_dev < 0.0 {
            self.sum_sq_dev = 0.0;
        }
    }

    /// Combines the statistics of two disjoint samples.
    pub fn merge(&self, other: &DataSummary) -> DataSummary {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        let delta = other.mean - self.mean;
        DataSummary {
            count: self.count + other.count,
            mean: self.mean + delta * nb / n,
            sum_sq_dev: (self.sum_sq_dev + other.sum_sq_dev + delta * delta * na * nb / n).max(0.0),
        }
    }
}

/// Parameters of one concrete data-generating model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelDraw {
    pub mean: f64,
    pub variance: f64,
}

/// Two-pass summary of a sample.
pub fn summarize(samples: &[f64]) -> DataSummary {
    if samples.is_empty() {
        return DataSummary::EMPTY;
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let ssd: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
    DataSummary {
        count: samples.len(),
        mean,
        sum_sq_dev: ssd.max(0.0),
    }
}

/// Conjugate update of `prior` with the statistics of observed data.
pub fn posterior_update(prior: &NormalGammaParams, data: &DataSummary) -> NormalGammaParams {
    if data.count == 0 {
        return *prior;
    }
    let n = data.count as f64;
    let n1 = prior.n_scale + n;
    let v1 = prior.v_scale + n;
    let dev = data.mean - prior.mu;
    let var1 = (data.sum_sq_dev
        + prior.v_scale * prior.var_param
        + n * prior.n_scale / n1 * dev * dev)
        / v1;
    NormalGammaParams {
        mu: (prior.n_scale * prior.mu + n * data.mean) / n1,
        n_scale: n1,
        var_param: var1,
        v_scale: v1,
    }
}

/// Width of the central `coverage` interval of the Student-t marginal of the
/// mean. The marginal is symmetric and unimodal, so this is also the HDI.
pub fn credible_interval_length(post: &NormalGammaParams, coverage: f64) -> Result<f64> {
    check_coverage(coverage)?;
    let t = cached_t_quantile(0.5 * (1.0 + coverage), post.v_scale)?;
    Ok(cil_from_quantile(post, t))
}

/// CIL given a precomputed upper t quantile for `post.v_scale` degrees of freedom.
#[inline]
pub fn cil_from_quantile(post: &NormalGammaParams, t_upper: f64) -> f64 {
    2.0 * t_upper * (post.var_param / post.n_scale).sqrt()
}

pub(crate) fn check_coverage(coverage: f64) -> Result<()> {
    if coverage > 0.0 && coverage < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            "coverage",
            format!("must lie in (0, 1), got {coverage}"),
        ))
    }
}

/// Quantile of the standard Student-t distribution.
///
/// Works on the tail mass `a = min(p, 1 - p)` so nothing cancels near the
/// median: close to zero the central mass `I_x(1/2, df/2)` is inverted,
/// further out the tail `I_y(df/2, 1/2)`. Newton steps on the same
/// (cancellation-free) residual then polish to near machine precision.
pub fn student_t_quantile(p: f64, df: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid("p", format!("must lie in (0, 1), got {p}")));
    }
    if !(df > 0.0 && df.is_finite()) {
        return Err(Error::invalid("df", format!("must be finite and > 0, got {df}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let tail = if p < 0.5 { p } else { 1.0 - p };
    let central = 0.5 - tail;
    let t = upper_t(tail, central, df)?;
    Ok(if p < 0.5 { -t } else { t })
}

/// Positive `t` with upper-tail mass `tail` (= 1/2 - `central`).
fn upper_t(tail: f64, central: f64, df: f64) -> Result<f64> {
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::invalid("df", e.to_string()))?;
    let near_centre = central < 0.25;
    let mut t = if near_centre {
        let x = beta::inv_beta_reg(0.5, 0.5 * df, 2.0 * central);
        (df * x / (1.0 - x)).sqrt()
    } else {
        let y = beta::inv_beta_reg(0.5 * df, 0.5, 2.0 * tail);
        (df * (1.0 - y) / y).sqrt()
    };
    if !t.is_finite() {
        t = dist.inverse_cdf(1.0 - tail);
    }
    // Residual is P(0 < T < t) - central, evaluated without cancellation.
    let residual = |t: f64| {
        if near_centre {
            0.5 * beta::beta_reg(0.5, 0.5 * df, t * t / (df + t * t)) - central
        } else {
            tail - 0.5 * beta::beta_reg(0.5 * df, 0.5, df / (df + t * t))
        }
    };
    for _ in 0..8 {
        let density = dist.pdf(t);
        if !(density > 0.0 && density.is_finite()) {
            break;
        }
        let step = residual(t) / density;
        if !step.is_finite() {
            break;
        }
        t = (t - step).max(0.0);
        if step.abs() <= 1e-15 * t.max(1e-300) {
            break;
        }
    }
    Ok(t)
}

/// Memoised [`student_t_quantile`]. Rehearsals ask for the same handful of
/// `(p, df)` pairs over and over.
pub(crate) fn cached_t_quantile(p: f64, df: f64) -> Result<f64> {
    const CAPACITY: usize = 1 << 16;
    static CACHE: OnceLock<RwLock<HashMap<(u64, u64), f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let key = (p.to_bits(), df.to_bits());
    if let Some(&q) = cache.read().ok().and_then(|c| c.get(&key).copied()).as_ref() {
        return Ok(q);
    }
    let q = student_t_quantile(p, df)?;
    if let Ok(mut c) = cache.write() {
        if c.len() < CAPACITY {
            c.insert(key, q);
        }
    }
    Ok(q)
}

/// Draws one data model from a normal-gamma distribution.
pub fn sample_model_params<R: Rng + ?Sized>(post: &NormalGammaParams, rng: &mut R) -> ModelDraw {
    let shape = 0.5 * post.v_scale;
    let scale = 2.0 / (post.v_scale * post.var_param);
    // Valid parameters always give a valid gamma.
    let precision: f64 = Gamma::new(shape, scale)
        .expect("gamma parameters validated upstream")
        .sample(rng);
    let z: f64 = StandardNormal.sample(rng);
    ModelDraw {
        mean: post.mu + z / (post.n_scale * precision).sqrt(),
        variance: 1.0 / precision,
    }
}

/// `k` i.i.d. draws from `Normal(draw.mean, draw.variance)`.
pub fn generate_samples<R: Rng + ?Sized>(draw: &ModelDraw, k: usize, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(k);
    fill_samples(draw, &mut out, k, rng);
    out
}

pub(crate) fn fill_samples<R: Rng + ?Sized>(draw: &ModelDraw, out: &mut Vec<f64>, k: usize, rng: &mut R) {
    let sd = draw.variance.sqrt();
    out.clear();
    out.extend((0..k).map(|_| {
        let z: f64 = StandardNormal.sample(rng);
        draw.mean + sd * z
    }));
}

/// Closed-form expectation of the variance parameter obtained when data of
/// size `n_future`, generated from the posterior of `data`, is combined with
/// `prior` alone.
///
/// ```text
/// E[var2] = 1/(n'+v0) * [ (n' - 1 + n0/(n'+n0)) * var1
///                         + v0 * var0
///                         + n' n0 n^2 / ((n'+n0)(n+n0)^2) * (xbar - mu0)^2 ]
/// ```
///
/// The derivation replaces `E[1/phi]` by `1/E[phi]`, so this is a first-order
/// approximation; it reproduces the median of the simulated variance closely
/// but sits below its mean.
pub fn expected_rehearsal_variance(
    prior: &NormalGammaParams,
    data: &DataSummary,
    n_future: usize,
) -> Result<f64> {
    if data.count == 0 {
        return Err(Error::Precondition("data.count must be >= 1".into()));
    }
    if n_future == 0 {
        return Err(Error::invalid("n_future", "must be >= 1"));
    }
    let post = posterior_update(prior, data);
    let nf = n_future as f64;
    let n = data.count as f64;
    let n0 = prior.n_scale;
    let dev = data.mean - prior.mu;
    let coefficient = nf - 1.0 + n0 / (nf + n0);
    let offset = nf * n0 * n * n / ((nf + n0) * (n + n0) * (n + n0)) * dev * dev;
    Ok((coefficient * post.var_param + prior.v_scale * prior.var_param + offset) / (nf + prior.v_scale))
}
