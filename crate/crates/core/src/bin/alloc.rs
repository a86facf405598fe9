//! Command-line experiment runner.
//!
//! Exit codes: 0 success, 2 configuration error, 3 i/o error.
//! `ALLOC_WORKERS` caps the worker-thread count for parallel trials.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use allocsim::config::{ConfigError, ExperimentPlan};
use allocsim::harness::{self, HarnessError};

#[derive(Parser)]
#[command(name = "alloc", about = "Seeded simulator for constrained repeated resource allocation", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonRunArgs {
    /// Master seed; overrides the config's `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    /// Trial count; overrides the config's `n_trials` key.
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write tidy long-format plot data.
    #[arg(long)]
    emit_plot_data: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment plan.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: CommonRunArgs,
    },
    /// Run several plans with shared seeds (paired value/cost draws).
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        configs: Vec<PathBuf>,
        #[command(flatten)]
        common: CommonRunArgs,
    },
    /// Per-epoch fixed-point diagnostics (requires updater = oftrl_fp).
    Fpdiag {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: CommonRunArgs,
    },
    /// Parse and lint a config, printing warnings.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn init_workers() {
    if let Ok(v) = std::env::var("ALLOC_WORKERS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

/// CLI flags take precedence over config-file keys.
fn load_plan(path: &PathBuf, common: Option<&CommonRunArgs>) -> Result<ExperimentPlan, HarnessError> {
    let (mut plan, warnings) = ExperimentPlan::from_file(path)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    if let Some(c) = common {
        if let Some(seed) = c.seed {
            plan.master_seed = seed;
        }
        if let Some(trials) = c.trials {
            plan.n_trials = trials;
        }
    }
    plan.validate()?;
    Ok(plan)
}

fn exit_code_for(err: &HarnessError) -> u8 {
    match err {
        HarnessError::Config(ConfigError::Io(_)) | HarnessError::Io(_) => 3,
        HarnessError::Config(_) | HarnessError::Benchmark(_) => 2,
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { config, common } => {
            let plan = load_plan(&config, Some(&common))?;
            let summary = harness::run_to_dir(&plan, &common.out, common.emit_plot_data)?;
            println!(
                "{}: {} trials, mean welfare {:.4}, mean |u-v| {:.4}, max violation {}",
                summary.label,
                summary.n_trials,
                summary.stats.aggregate.welfare_mean,
                summary.stats.aggregate.misreport_mean,
                summary.stats.aggregate.violation_max,
            );
            println!("outputs written to {}", common.out.display());
        }
        Command::Compare { configs, common } => {
            let mut plans = Vec::with_capacity(configs.len());
            for path in &configs {
                plans.push(load_plan(path, Some(&common))?);
            }
            let compare = harness::compare_to_dir(&plans, &common.out, common.emit_plot_data)?;
            for (label, agg) in &compare.arms {
                println!(
                    "{label}: mean welfare {:.4}, mean |u-v| {:.4}",
                    agg.welfare_mean, agg.misreport_mean
                );
            }
            println!("outputs written to {}", common.out.display());
        }
        Command::Fpdiag { config, common } => {
            let plan = load_plan(&config, Some(&common))?;
            let aggregates = harness::fpdiag_to_dir(&plan, &common.out)?;
            println!("epoch,mean_rel_diff,mean_residual_exact,mean_residual_approx");
            for a in &aggregates {
                println!(
                    "{},{:.6},{:.6e},{:.6e}",
                    a.epoch, a.mean_rel_diff, a.mean_residual_exact, a.mean_residual_approx
                );
            }
            println!("outputs written to {}", common.out.display());
        }
        Command::Validate { config } => {
            let plan = load_plan(&config, None)?;
            println!(
                "ok: T={} K={} d={} mechanism={} trials={}",
                plan.market.horizon,
                plan.market.n_agents,
                plan.market.cost_dims,
                plan.mechanism.name(),
                plan.n_trials
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    init_workers();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
