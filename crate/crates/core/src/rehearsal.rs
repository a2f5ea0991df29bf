// SPDX-License-Identifier: MIT OR Apache-2.0

//! Rehearsal simulations: predicted CIL distributions for future sample sizes.
//!
//! Each of the `m` repetitions draws one data model from the current
//! posterior, generates `max(sizes)` samples once and, for every requested
//! size `k`, combines the first `k` of them with the *original prior only*.
//! Collected data never enters a rehearsal posterior.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conjugate::{
    cil_from_quantile, posterior_update, sample_model_params, DataSummary, NormalGammaParams,
};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::rng;

pub const DEFAULT_M: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RehearsalConfig {
    /// Number of simulated parallel experiments.
    pub m: usize,
    /// Future total sample sizes, strictly increasing.
    pub sizes: Vec<usize>,
    pub coverage: f64,
}

impl RehearsalConfig {
    /// Every size from 1 to `n_max`.
    pub fn full(m: usize, n_max: usize, coverage: f64) -> Self {
        Self {
            m,
            sizes: (1..=n_max).collect(),
            coverage,
        }
    }

    pub fn validate(&self, n_max: usize) -> Result<()> {
        if self.m < 2 {
            return Err(Error::invalid("rehearsal.m", format!("must be >= 2, got {}", self.m)));
        }
        if self.sizes.is_empty() {
            return Err(Error::Empty("rehearsal.sizes"));
        }
        if self.sizes[0] == 0 || self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(
                "rehearsal.sizes",
                "must be positive and strictly increasing",
            ));
        }
        if *self.sizes.last().unwrap() > n_max {
            return Err(Error::invalid(
                "rehearsal.sizes",
                format!("largest size exceeds n_max = {n_max}"),
            ));
        }
        crate::conjugate::check_coverage(self.coverage)
    }

    pub fn max_size(&self) -> usize {
        self.sizes.last().copied().unwrap_or(0)
    }
}

/// Sorted predicted CILs for each evaluated future size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CilDistribution {
    /// Collected sample size when the prediction was made.
    pub at_i: usize,
    /// Posterior the futures were drawn from.
    pub posterior: NormalGammaParams,
    pub sizes: Vec<usize>,
    /// `cils[j]` is the sorted list of `m` values for `sizes[j]`.
    pub cils: Vec<Vec<f64>>,
}

impl CilDistribution {
    pub fn for_size(&self, k: usize) -> Option<&[f64]> {
        self.sizes
            .binary_search(&k)
            .ok()
            .map(|j| self.cils[j].as_slice())
    }

    pub fn largest(&self) -> &[f64] {
        self.cils.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// `(k, median)` for every evaluated size.
    pub fn medians(&self) -> Vec<(usize, f64)> {
        self.sizes
            .iter()
            .zip(&self.cils)
            .map(|(&k, v)| (k, median_sorted(v)))
            .collect()
    }
}

/// Runs the rehearsal sequentially. The stream consumes one `u64` from `rng`
/// and derives an independent sub-stream for every repetition from it.
pub fn run_rehearsal<R: Rng + ?Sized>(
    post: &NormalGammaParams,
    prior: &NormalGammaParams,
    cfg: &RehearsalConfig,
    rng: &mut R,
) -> Result<CilDistribution> {
    run_rehearsal_with(post, prior, cfg, rng.next_u64(), Execution::Sequential)
}

/// Rehearsal with an explicit base seed and execution strategy. Output is
/// identical for every strategy.
pub fn run_rehearsal_with(
    post: &NormalGammaParams,
    prior: &NormalGammaParams,
    cfg: &RehearsalConfig,
    base_seed: u64,
    exec: Execution,
) -> Result<CilDistribution> {
    cfg.validate(usize::MAX)?;
    post.validate()?;
    prior.validate()?;
    let upper = 0.5 * (1.0 + cfg.coverage);
    let quantiles = cfg
        .sizes
        .iter()
        .map(|&k| crate::conjugate::cached_t_quantile(upper, prior.v_scale + k as f64))
        .collect::<Result<Vec<_>>>()?;

    let rows = exec.map_indexed(cfg.m, |r| {
        let mut stream = rng::stream(base_seed, &[r as u64]);
        rehearse_once(post, prior, &cfg.sizes, &quantiles, &mut stream)
    });

    let mut cils: Vec<Vec<f64>> = (0..cfg.sizes.len())
        .map(|_| Vec::with_capacity(cfg.m))
        .collect();
    for row in rows {
        for (col, v) in cils.iter_mut().zip(row) {
            col.push(v);
        }
    }
    for col in &mut cils {
        col.sort_by(f64::total_cmp);
    }
    let at_i = (post.v_scale - prior.v_scale).round().max(0.0) as usize;
    Ok(CilDistribution {
        at_i,
        posterior: *post,
        sizes: cfg.sizes.clone(),
        cils,
    })
}

/// One simulated experiment: CIL at every requested size along a single
/// nested sequence of future samples.
pub(crate) fn rehearse_once<R: Rng + ?Sized>(
    post: &NormalGammaParams,
    prior: &NormalGammaParams,
    sizes: &[usize],
    quantiles: &[f64],
    rng: &mut R,
) -> Vec<f64> {
    let draw = sample_model_params(post, rng);
    let sd = draw.variance.sqrt();
    let mut summary = DataSummary::EMPTY;
    let mut out = Vec::with_capacity(sizes.len());
    let mut next = 0;
    let kmax = sizes.last().copied().unwrap_or(0);
    for k in 1..=kmax {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        summary.push(draw.mean + sd * z);
        if sizes[next] == k {
            let sim_post = posterior_update(prior, &summary);
            out.push(cil_from_quantile(&sim_post, quantiles[next]));
            next += 1;
        }
    }
    out
}

/// Linear-interpolation percentile of sorted values, `q` in `[0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("values"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid("q", format!("must lie in [0, 1], got {q}")));
    }
    if values.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Unsorted("values"));
    }
    Ok(percentile_unchecked(values, q))
}

pub(crate) fn percentile_unchecked(values: &[f64], q: f64) -> f64 {
    let rank = q * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if lo + 1 >= values.len() {
        values[values.len() - 1]
    } else {
        values[lo] + frac * (values[lo + 1] - values[lo])
    }
}

pub(crate) fn median_sorted(values: &[f64]) -> f64 {
    percentile_unchecked(values, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conjugate::{credible_interval_length, generate_samples, summarize};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flat() -> NormalGammaParams {
        NormalGammaParams::new(0.0, 1.0, 20.0, 1.0).unwrap()
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.5).unwrap(), 3.0);
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&[10.0, 20.0, 30.0, 40.0], 0.25).unwrap(), 17.5);
        assert_eq!(percentile(&[7.0], 0.3).unwrap(), 7.0);
        assert!(percentile(&[], 0.5).is_err());
        assert!(percentile(&[2.0, 1.0], 0.5).is_err());
        assert!(percentile(&[1.0], 1.5).is_err());
    }

    #[test]
    fn shape_contract_and_determinism() {
        let cfg = RehearsalConfig {
            m: 50,
            sizes: vec![10, 50],
            coverage: 0.95,
        };
        let post = posterior_update(&flat(), &summarize(&[0.1, -0.4, 1.2, 0.3]));
        let a = run_rehearsal(&post, &flat(), &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a.cils.len(), 2);
        for col in &a.cils {
            assert_eq!(col.len(), 50);
            assert!(col.windows(2).all(|w| w[0] <= w[1]));
            assert!(col.iter().all(|&v| v > 0.0));
        }
        assert_eq!(a.at_i, 4);
        let b = run_rehearsal(&post, &flat(), &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parallel_matches_sequential() {
        let cfg = RehearsalConfig::full(64, 30, 0.95);
        let post = posterior_update(&flat(), &summarize(&[0.5, -0.2, 0.9]));
        let seq = run_rehearsal_with(&post, &flat(), &cfg, 77, Execution::Sequential).unwrap();
        let par = run_rehearsal_with(&post, &flat(), &cfg, 77, Execution::available_parallel()).unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn simulated_posterior_uses_prior_only() {
        // Rebuild one repetition by hand from the same sub-stream.
        let prior = NormalGammaParams::new(0.3, 4.0, 2.0, 3.0).unwrap();
        let collected = [5.0, 6.0, 7.0, 5.5, 6.2];
        let post = posterior_update(&prior, &summarize(&collected));
        let cfg = RehearsalConfig {
            m: 2,
            sizes: vec![1, 3, 8],
            coverage: 0.9,
        };
        let dist = run_rehearsal_with(&post, &prior, &cfg, 11, Execution::Sequential).unwrap();

        let mut stream = rng::stream(11, &[0]);
        let draw = sample_model_params(&post, &mut stream);
        let ys = generate_samples(&draw, 8, &mut stream);
        for (j, &k) in cfg.sizes.iter().enumerate() {
            let expected =
                credible_interval_length(&posterior_update(&prior, &summarize(&ys[..k])), 0.9).unwrap();
            assert!(
                dist.cils[j].iter().any(|&v| (v - expected).abs() <= 1e-12 * expected),
                "size {k}: {expected} not in {:?}",
                dist.cils[j]
            );
        }
    }

    #[test]
    fn median_cil_shrinks_with_future_size() {
        let cfg = RehearsalConfig {
            m: DEFAULT_M,
            sizes: vec![10, 50],
            coverage: 0.95,
        };
        let mut wins = 0;
        for run in 0..100u64 {
            let mut data_rng = rng::stream(900, &[run]);
            let xs = generate_samples(
                &crate::conjugate::ModelDraw {
                    mean: 0.0,
                    variance: 1.0,
                },
                10,
                &mut data_rng,
            );
            let post = posterior_update(&flat(), &summarize(&xs));
            let d = run_rehearsal_with(&post, &flat(), &cfg, run, Execution::Sequential).unwrap();
            if median_sorted(&d.cils[1]) < median_sorted(&d.cils[0]) {
                wins += 1;
            }
        }
        assert!(wins >= 95, "{wins}");
    }

    #[test]
    fn config_validation() {
        assert!(RehearsalConfig { m: 1, sizes: vec![1], coverage: 0.95 }.validate(50).is_err());
        assert!(RehearsalConfig { m: 5, sizes: vec![], coverage: 0.95 }.validate(50).is_err());
        assert!(RehearsalConfig { m: 5, sizes: vec![3, 3], coverage: 0.95 }.validate(50).is_err());
        assert!(RehearsalConfig { m: 5, sizes: vec![3, 60], coverage: 0.95 }.validate(50).is_err());
        assert!(RehearsalConfig::full(5, 50, 0.95).validate(50).is_ok());
    }

    proptest! {
        #[test]
        fn percentile_is_monotone_and_bounded(
            mut xs in proptest::collection::vec(-100.0f64..100.0, 1..50),
            q1 in 0.0f64..=1.0,
            q2 in 0.0f64..=1.0,
        ) {
            xs.sort_by(f64::total_cmp);
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            let a = percentile(&xs, lo).unwrap();
            let b = percentile(&xs, hi).unwrap();
            prop_assert!(a <= b);
            prop_assert_eq!(percentile(&xs, 0.0).unwrap(), xs[0]);
            prop_assert_eq!(percentile(&xs, 1.0).unwrap(), xs[xs.len() - 1]);
        }
    }
}
