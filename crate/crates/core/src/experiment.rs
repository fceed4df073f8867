//! Parallel Monte Carlo execution and result files.
//!
//! Rounds run on a rayon pool and are reduced to checkpoint summaries inside
//! the worker, so full traces never accumulate. Summaries are collected in
//! round order; the reduction and every file write happen afterwards on the
//! calling thread, which makes the outputs independent of the worker count.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{SimConfig, ThompsonScale};
use crate::error::{Error, Result};
use crate::metrics::{
    checkpoint_grid, reduce, summarize_round, RatioVerdict, RoundSummary, RunMetrics, Series,
};
use crate::simulator::{dump_trace, run_round_with};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "AOI_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "results";

pub const RESULT_FILES: [&str; 4] = ["regret.csv", "kcount.csv", "aoi.csv", "summary.toml"];

pub fn default_output_dir() -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

pub fn output_dir(cfg: &SimConfig) -> PathBuf {
    cfg.output_dir.clone().unwrap_or_else(default_output_dir)
}

/// Runs every round and reduces them. Trace dumps, if enabled, go to
/// `trace_dir`.
pub fn run_experiment(cfg: &SimConfig) -> Result<RunMetrics> {
    run_rounds(cfg, None)
}

fn run_rounds(cfg: &SimConfig, trace_dir: Option<&Path>) -> Result<RunMetrics> {
    cfg.validate()?;
    let grid = checkpoint_grid(cfg.horizon, cfg.checkpoints);
    let dump = cfg.dump_traces && trace_dir.is_some();
    let one_round = |round: u64| -> Result<RoundSummary> {
        let trace = run_round_with(cfg, round, dump)?;
        if let (true, Some(dir)) = (dump, trace_dir) {
            dump_trace(&trace, &dir.join(format!("round_{round:05}.jsonl")))?;
        }
        Ok(summarize_round(&trace, &grid))
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Contract(format!("cannot start worker pool: {e}")))?;
    let summaries: Vec<RoundSummary> = pool.install(|| {
        (0..cfg.rounds as u64)
            .into_par_iter()
            .map(one_round)
            .collect::<Result<_>>()
    })?;
    Ok(reduce(&grid, cfg.num_pairs, &summaries))
}

/// Runs the experiment and writes the result files into `dir`.
///
/// Files are staged in a scratch directory and moved into place only after
/// everything has been written; on error the scratch directory is removed and
/// `dir` is left as it was.
pub fn run_to_dir(cfg: &SimConfig, dir: &Path) -> Result<RunMetrics> {
    fs::create_dir_all(dir)?;
    let staging = dir.join(format!(".staging-{}", std::process::id()));
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(&staging)?;
    let result = (|| {
        let trace_dir = staging.join("traces");
        if cfg.dump_traces {
            fs::create_dir_all(&trace_dir)?;
        }
        let metrics = run_rounds(cfg, Some(&trace_dir))?;
        write_results(cfg, &metrics, &staging)?;
        publish(&staging, dir)?;
        Ok(metrics)
    })();
    let _ = fs::remove_dir_all(&staging);
    result
}

fn publish(staging: &Path, dir: &Path) -> Result<()> {
    for name in RESULT_FILES {
        fs::rename(staging.join(name), dir.join(name))?;
    }
    let traces = staging.join("traces");
    if traces.exists() {
        let target = dir.join("traces");
        if target.exists() {
            fs::remove_dir_all(&target)?;
        }
        fs::rename(traces, target)?;
    }
    Ok(())
}

pub fn write_results(cfg: &SimConfig, metrics: &RunMetrics, dir: &Path) -> Result<()> {
    fs::write(dir.join("regret.csv"), regret_csv(metrics))?;
    fs::write(dir.join("kcount.csv"), kcount_csv(metrics))?;
    fs::write(dir.join("aoi.csv"), aoi_csv(metrics))?;
    fs::write(dir.join("summary.toml"), summary_toml(cfg, metrics)?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// 17 significant digits, enough to round-trip any `f64`.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn table(grid: &[u64], columns: &[(String, &Series)]) -> String {
    let mut out = String::from("t");
    for (name, _) in columns {
        let _ = write!(out, ",{name}_mean,{name}_stderr");
    }
    out.push('\n');
    for (i, t) in grid.iter().enumerate() {
        let _ = write!(out, "{t}");
        for (_, s) in columns {
            let _ = write!(out, ",{},{}", num(s.mean[i]), num(s.stderr[i]));
        }
        out.push('\n');
    }
    out
}

/// `t,<policy>_regret_mean,<policy>_regret_stderr,...`
pub fn regret_csv(m: &RunMetrics) -> String {
    let cols: Vec<_> = m
        .policies
        .iter()
        .map(|p| (format!("{}_regret", p.label), &p.regret))
        .collect();
    table(&m.t_grid, &cols)
}

/// Sub-optimal selection counts; with more than one pair also the case split.
pub fn kcount_csv(m: &RunMetrics) -> String {
    let mut cols = Vec::new();
    for p in &m.policies {
        cols.push((format!("{}_k", p.label), &p.k));
        if m.num_pairs > 1 {
            cols.push((format!("{}_case1", p.label), &p.case1));
            cols.push((format!("{}_case2", p.label), &p.case2));
        }
    }
    table(&m.t_grid, &cols)
}

/// Time-averaged AoI of the benchmark and of each policy.
pub fn aoi_csv(m: &RunMetrics) -> String {
    let mut cols = vec![("benchmark_aoi".to_string(), &m.benchmark_aoi)];
    cols.extend(
        m.policies
            .iter()
            .map(|p| (format!("{}_aoi", p.label), &p.aoi)),
    );
    table(&m.t_grid, &cols)
}

// ---------------------------------------------------------------------------
// Summary
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct Summary {
    run: RunInfo,
    policies: Vec<PolicySummary>,
}

#[derive(Debug, Serialize)]
struct RunInfo {
    #[serde(skip_serializing_if = "Option::is_none")]
    preset: Option<String>,
    model: String,
    num_sources: usize,
    num_channels: usize,
    num_pairs: usize,
    horizon: u64,
    arrival_rate: f64,
    rounds: usize,
    seed: u64,
    source_policy: &'static str,
    alpha: f64,
    v: f64,
    v_rule: &'static str,
    delta: f64,
    uncoupled: bool,
    clamp_fraction: f64,
    min_mu_seen: f64,
    min_gap_seen: f64,
    benchmark_aoi: f64,
}

#[derive(Debug, Serialize)]
struct PolicySummary {
    policy: String,
    regret_mean: f64,
    regret_stderr: f64,
    k_mean: f64,
    k_stderr: f64,
    aoi_mean: f64,
    ratio_verdict: RatioVerdict,
    ratio_median: f64,
    ratio_min: f64,
    ratio_max: f64,
    dominance_violations: u64,
    disjointness_violations: u64,
    exploit_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    case1_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    case2_mean: Option<f64>,
}

pub fn summary_toml(cfg: &SimConfig, m: &RunMetrics) -> Result<String> {
    let params = cfg.effective_params();
    let multi = m.num_pairs > 1;
    let summary = Summary {
        run: RunInfo {
            preset: cfg.preset.clone(),
            model: cfg.model_name.clone(),
            num_sources: cfg.num_sources,
            num_channels: cfg.num_channels(),
            num_pairs: cfg.num_pairs,
            horizon: cfg.horizon,
            arrival_rate: cfg.arrival_rate,
            rounds: m.rounds,
            seed: cfg.seed,
            source_policy: cfg.source_policy.name(),
            alpha: params.alpha,
            v: params.v,
            v_rule: match cfg.params.v {
                ThompsonScale::Fixed(_) => "fixed",
                ThompsonScale::Theory => "theory",
            },
            delta: params.delta,
            uncoupled: cfg.uncoupled,
            clamp_fraction: m.clamp_fraction,
            min_mu_seen: m.min_mu_seen,
            min_gap_seen: m.min_gap_seen,
            benchmark_aoi: m.benchmark_aoi.last_mean(),
        },
        policies: m
            .policies
            .iter()
            .map(|p| PolicySummary {
                policy: p.label.clone(),
                regret_mean: p.regret.last_mean(),
                regret_stderr: p.regret.last_stderr(),
                k_mean: p.k.last_mean(),
                k_stderr: p.k.last_stderr(),
                aoi_mean: p.aoi.last_mean(),
                ratio_verdict: p.ratio.verdict,
                ratio_median: p.ratio.median,
                ratio_min: p.ratio.band_min,
                ratio_max: p.ratio.band_max,
                dominance_violations: p.dominance_violations,
                disjointness_violations: p.disjointness_violations,
                exploit_fraction: p.exploit_fraction,
                case1_mean: multi.then(|| p.case1.last_mean()),
                case2_mean: multi.then(|| p.case2.last_mean()),
            })
            .collect(),
    };
    toml::to_string(&summary).map_err(|e| Error::Contract(format!("summary serialization: {e}")))
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Alpha,
    V,
    Delta,
    Eps,
    Explore,
}

impl SweepParam {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "alpha" => Self::Alpha,
            "v" => Self::V,
            "delta" => Self::Delta,
            "eps" => Self::Eps,
            "explore" => Self::Explore,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Alpha => "alpha",
            Self::V => "v",
            Self::Delta => "delta",
            Self::Eps => "eps",
            Self::Explore => "explore",
        }
    }

    pub fn apply(self, cfg: &mut SimConfig, value: f64) {
        let p = &mut cfg.params;
        match self {
            Self::Alpha => p.alpha = Some(value),
            Self::V => p.v = ThompsonScale::Fixed(value),
            Self::Delta => p.delta = value,
            Self::Eps => p.eps = value,
            Self::Explore => p.explore = value,
        }
    }
}

/// Runs the experiment once per value. Each run writes into
/// `<dir>/<param>=<value>/`, and `<dir>/sweep.csv` collects final regret per
/// policy and value.
pub fn sweep(
    cfg: &SimConfig,
    param: SweepParam,
    values: &[f64],
    dir: &Path,
) -> Result<Vec<(f64, RunMetrics)>> {
    if values.is_empty() {
        return Err(Error::validation("values", "at least one value required"));
    }
    let mut results = Vec::with_capacity(values.len());
    for &value in values {
        let mut c = cfg.clone();
        param.apply(&mut c, value);
        c.validate()?;
        let sub = dir.join(format!("{}={value}", param.name()));
        let metrics = run_to_dir(&c, &sub)?;
        results.push((value, metrics));
    }
    fs::write(dir.join("sweep.csv"), sweep_csv(param, &results))?;
    Ok(results)
}

pub fn sweep_csv(param: SweepParam, results: &[(f64, RunMetrics)]) -> String {
    let mut out = String::from(param.name());
    if let Some((_, first)) = results.first() {
        for p in &first.policies {
            let _ = write!(
                out,
                ",{0}_regret_mean,{0}_regret_stderr,{0}_k_mean",
                p.label
            );
        }
    }
    out.push('\n');
    for (value, m) in results {
        let _ = write!(out, "{value}");
        for p in &m.policies {
            let _ = write!(
                out,
                ",{},{},{}",
                num(p.regret.last_mean()),
                num(p.regret.last_stderr()),
                num(p.k.last_mean())
            );
        }
        out.push('\n');
    }
    out
}
