//! Command-line front end: `aoi run`, `aoi verify` and `aoi sweep`.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use aoi_core::config::{parse_config, parse_policy_list, SimConfig, PRESETS};
use aoi_core::experiment::{self, SweepParam};
use aoi_core::metrics::RunMetrics;
use aoi_core::verify::{run_checks, Check};

#[derive(Debug, Parser)]
#[command(
    name = "aoi",
    version,
    about = "AoI scheduling with contextual bandit channel selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment and write regret.csv, kcount.csv, aoi.csv
    /// and summary.toml.
    Run(Common),
    /// Run the self-check battery; exits nonzero if any check fails.
    Verify(VerifyArgs),
    /// Repeat an experiment across values of one parameter.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML config file. Flags given on the command line override it.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Named preset (fig2, fig3, fig4, fig5, desk, fixed_gap).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Keep the full preset scale instead of the desk scale (T = 1e4, 100 rounds).
    #[arg(long)]
    full_scale: bool,
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated channel policies.
    #[arg(long, value_delimiter = ',')]
    policies: Option<Vec<String>>,
    /// Source-channel pairs per slot.
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    sources: Option<usize>,
    #[arg(long)]
    arrival_rate: Option<f64>,
    /// Output directory.
    #[arg(long, env = experiment::OUTPUT_DIR_ENV)]
    out: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
    /// Run the benchmark on independent randomness.
    #[arg(long)]
    uncoupled: bool,
    /// Write per-slot JSONL traces under <out>/traces.
    #[arg(long)]
    dump_traces: bool,
    /// Apply the age threshold per scheduled pair.
    #[arg(long)]
    per_pair_threshold: bool,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Run only these checks (repeatable).
    #[arg(long = "check")]
    checks: Vec<String>,
    #[arg(long, value_enum)]
    inject_fault: Option<Fault>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Fault {
    /// Skip the [0, 1] score projection.
    SkipClamp,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Parameter to vary: alpha, v, delta, eps or explore.
    #[arg(long)]
    param: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
}

impl Common {
    fn build(&self, default_rounds: Option<usize>) -> Result<SimConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                parse_config(&text).with_context(|| format!("in {}", path.display()))?
            }
            (None, Some(name)) => {
                let mut cfg = SimConfig::preset(name).with_context(|| {
                    format!("unknown preset `{name}` (known: {})", PRESETS.join(", "))
                })?;
                if !self.full_scale {
                    cfg.desk_scale();
                }
                cfg
            }
            (None, None) => SimConfig::preset("desk").expect("desk preset"),
        };
        if let (Some(r), None, None) = (default_rounds, self.rounds, &self.config) {
            cfg.rounds = r;
        }
        if let Some(v) = self.horizon {
            cfg.horizon = v;
        }
        if let Some(v) = self.rounds {
            cfg.rounds = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(names) = &self.policies {
            cfg.channel_policies = parse_policy_list(names)?;
        }
        if let Some(v) = self.pairs {
            cfg.num_pairs = v;
        }
        if let Some(v) = self.sources {
            cfg.num_sources = v;
        }
        if let Some(v) = self.arrival_rate {
            cfg.arrival_rate = v;
        }
        if let Some(dir) = &self.out {
            cfg.output_dir = Some(dir.clone());
        }
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        cfg.uncoupled |= self.uncoupled;
        cfg.dump_traces |= self.dump_traces;
        cfg.per_pair_threshold |= self.per_pair_threshold;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_metrics(m: &RunMetrics) {
    println!(
        "{:<18} {:>14} {:>10} {:>12} {:>10} {:>10}",
        "policy", "regret", "stderr", "K", "stderr", "AoI"
    );
    for p in &m.policies {
        println!(
            "{:<18} {:>14.2} {:>10.2} {:>12.1} {:>10.1} {:>10.3}",
            p.label,
            p.regret.last_mean(),
            p.regret.last_stderr(),
            p.k.last_mean(),
            p.k.last_stderr(),
            p.aoi.last_mean()
        );
    }
    println!(
        "benchmark AoI {:.3}; clamp fraction {:.3e}",
        m.benchmark_aoi.last_mean(),
        m.clamp_fraction
    );
}

fn run(args: &Common) -> Result<ExitCode> {
    let cfg = args.build(None)?;
    let dir = experiment::output_dir(&cfg);
    let metrics = experiment::run_to_dir(&cfg, &dir)?;
    print_metrics(&metrics);
    println!("results written to {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

fn verify(args: &VerifyArgs) -> Result<ExitCode> {
    let mut cfg = args.common.build(Some(10))?;
    if let Some(Fault::SkipClamp) = args.inject_fault {
        cfg.skip_projection = true;
    }
    let checks = if args.checks.is_empty() {
        Check::ALL.to_vec()
    } else {
        args.checks
            .iter()
            .map(|name| {
                Check::parse(name).with_context(|| {
                    let known: Vec<_> = Check::ALL.iter().map(|c| c.name()).collect();
                    format!("unknown check `{name}` (known: {})", known.join(", "))
                })
            })
            .collect::<Result<_>>()?
    };
    let outcomes = run_checks(&cfg, &checks)?;
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        eprintln!("{failed} of {} checks failed", outcomes.len());
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep(args: &SweepArgs) -> Result<ExitCode> {
    let Some(param) = SweepParam::parse(&args.param) else {
        bail!(
            "unknown sweep parameter `{}` (alpha, v, delta, eps, explore)",
            args.param
        );
    };
    let cfg = args.common.build(None)?;
    let dir = experiment::output_dir(&cfg);
    let results = experiment::sweep(&cfg, param, &args.values, &dir)?;
    for (value, m) in &results {
        println!("{} = {value}", param.name());
        print_metrics(m);
    }
    println!("results written to {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run(args) => run(args),
        Command::Verify(args) => verify(args),
        Command::Sweep(args) => sweep(args),
    }
}
