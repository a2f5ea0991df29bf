// SPDX-License-Identifier: MIT OR Apache-2.0

//! `pbos`: simulation grid, FCW scenario, percentile thresholds and the
//! session service.

use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pbos_core::evaluation::cil_threshold_with;
use pbos_core::harness::config::FULL_REPLICATES;
use pbos_core::harness::fcw::{FcwWeights, FULL_GROUPS};
use pbos_core::harness::{run_fcw, run_grid, CilTarget, FcwConfig, FcwPreset, PriorSpec, ScenarioConfig};
use pbos_core::par::{self, Execution};
use pbos_core::rng;

#[derive(Parser)]
#[command(name = "pbos", version, about = "Predictive Bayesian optional stopping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the prior x target x TL x n_min grid.
    Simulate(Common),
    /// Run the FCW reaction-time scenario.
    Fcw(FcwArgs),
    /// Print the CIL thresholds that percentile targets resolve to.
    Threshold(ThresholdArgs),
    /// Serve live sessions over HTTP/JSON.
    Serve(ServeArgs),
}

#[derive(Args)]
struct Common {
    /// TOML config; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replicates per cell (simulate), groups per class (fcw) or datasets
    /// per threshold (threshold).
    #[arg(long)]
    replicates: Option<usize>,
    /// Full scale: 500 replicates, 10^5 FCW groups.
    #[arg(long)]
    paper_scale: bool,
    /// Worker threads (0 = one per core). Sequential when omitted; output
    /// is identical either way.
    #[arg(long, value_name = "N")]
    parallel: Option<usize>,
}

impl Common {
    fn run<T: Send>(&self, f: impl FnOnce(Execution) -> T + Send) -> T {
        match self.parallel {
            None => f(Execution::Sequential),
            Some(n) => par::with_threads(n, || f(Execution::available_parallel())),
        }
    }

    fn scenario(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::from_path(p).with_context(|| format!("loading {}", p.display()))?,
            None => ScenarioConfig::default(),
        };
        if self.paper_scale {
            cfg.replicates = FULL_REPLICATES;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(r) = self.replicates {
            cfg.replicates = r;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = Some(out.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Literal,
    LogSpace,
}

#[derive(Args)]
struct FcwArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Number of simulated groups.
    #[arg(long)]
    groups: Option<usize>,
    /// Weight classes by the measured reach probability instead of 0.08 / 0.92.
    #[arg(long)]
    measured_weights: bool,
}

#[derive(Args)]
struct ThresholdArgs {
    #[command(flatten)]
    common: Common,
    /// Reference prior name (repeatable); defaults to the config's priors.
    #[arg(long = "prior")]
    priors: Vec<String>,
    /// Percentile in [0, 1] (repeatable); defaults to the config's targets.
    #[arg(long = "percentile")]
    percentiles: Vec<f64>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    /// Directory for the session event logs; in-memory when omitted.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Simulate(c) => simulate(&c),
        Command::Fcw(a) => fcw(&a),
        Command::Threshold(a) => threshold(&a),
        Command::Serve(a) => serve(&a),
    }
}

fn simulate(c: &Common) -> Result<()> {
    let cfg = c.scenario()?;
    let out = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    let started = std::time::Instant::now();
    let grid = c.run(|exec| run_grid(&cfg, exec))?;
    grid.write_to(&out)?;
    let s = &grid.summary;
    println!(
        "{} cells, {} experiments in {:.1}s; median R^2 {}; wrote {}",
        s.cells.len(),
        grid.records.len(),
        started.elapsed().as_secs_f64(),
        s.r2_median.map_or("n/a".into(), |r| format!("{r:.3}")),
        out.display()
    );
    Ok(())
}

fn fcw(a: &FcwArgs) -> Result<()> {
    let c = &a.common;
    let mut cfg = match &c.config {
        Some(p) => FcwConfig::from_path(p).with_context(|| format!("loading {}", p.display()))?,
        None => FcwConfig::default(),
    };
    if c.paper_scale {
        cfg.groups = FULL_GROUPS;
    }
    if let Some(p) = a.preset {
        cfg.preset = match p {
            Preset::Literal => FcwPreset::Literal,
            Preset::LogSpace => FcwPreset::LogSpace,
        };
    }
    if let Some(g) = a.groups {
        cfg.groups = g;
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(r) = c.replicates {
        cfg.per_class = r;
    }
    if a.measured_weights {
        cfg.weights = FcwWeights::Measured;
    }
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let result = c.run(|exec| run_fcw(&cfg, exec))?;
    result.write_to(&out)?;
    let s = &result.summary;
    let pct = |x: Option<f64>| x.map_or("n/a".into(), |v| format!("{:+.1}%", 100.0 * v));
    println!(
        "reach probability {:.2}% ({} of {} groups); weighted cost benefit {}, unweighted {}; wrote {}",
        100.0 * s.reach_probability,
        s.reach_groups,
        s.groups,
        pct(s.weighted_cost_benefit),
        pct(s.unweighted_cost_benefit),
        out.display()
    );
    Ok(())
}

fn threshold(a: &ThresholdArgs) -> Result<()> {
    let c = &a.common;
    let mut cfg = c.scenario()?;
    if let Some(r) = c.replicates {
        cfg.threshold_reps = r;
    }
    if !a.priors.is_empty() {
        cfg.priors = a.priors.iter().map(|p| PriorSpec::Named(p.clone())).collect();
    }
    if !a.percentiles.is_empty() {
        cfg.cil_targets = a.percentiles.iter().map(|&p| CilTarget::Percentile(p)).collect();
    }
    cfg.validate()?;
    let model = cfg.data_model.as_draw();

    let mut rows = Vec::new();
    for (pi, spec) in cfg.priors.iter().enumerate() {
        let prior = spec.resolve()?;
        for (ti, target) in cfg.cil_targets.iter().enumerate() {
            let CilTarget::Percentile(p) = *target else { continue };
            // Same stream as the grid cell, so the numbers agree with summary.json.
            let seed = rng::derive_seed(cfg.seed, &[3, pi as u64, ti as u64]);
            let cil = c.run(|exec| {
                cil_threshold_with(&prior, &model, cfg.n_max, p, cfg.threshold_reps, cfg.coverage, seed, exec)
            })?;
            rows.push(format!("{},{p},{cil}", spec.name()));
        }
    }
    if rows.is_empty() {
        bail!("no percentile targets to resolve");
    }
    let mut text = String::from("prior_name,percentile,cil_thres\n");
    for r in &rows {
        text.push_str(r);
        text.push('\n');
    }
    match &c.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join("thresholds.csv");
            std::fs::write(&path, &text)?;
            tracing::info!(path = %path.display(), "wrote thresholds");
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn serve(a: &ServeArgs) -> Result<()> {
    let addr = SocketAddr::new(a.host, a.port);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(pbos_service::serve(addr, a.data_dir.as_deref()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arguments_parse() {
        assert!(pbos_core::harness::named_prior("flat").is_some());
        Cli::try_parse_from(["pbos", "simulate", "--seed", "3", "--parallel", "2"]).unwrap();
        assert!(Cli::try_parse_from(["pbos", "fcw", "--preset", "nope"]).is_err());
    }
}
