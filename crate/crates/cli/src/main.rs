mod commands;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Learn macro-level causes and effects from micro-level data.
#[derive(Debug, Parser)]
#[command(name = "macrocause", version)]
struct Cli {
    /// Run configuration (JSON). Missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured master seed.
    #[arg(long, global = true, env = "MACROCAUSE_SEED")]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the neuron experiment into a dataset directory.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        /// Trials per stimulus class (overrides the config).
        #[arg(long)]
        n_per_class: Option<usize>,
    },
    /// Write an exact discrete system, its partitions and optionally samples.
    Oracle(OracleArgs),
    /// Fit the kernel density estimate to a dataset.
    FitDensity {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn macro-variables from a dataset.
    Learn {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        density: DensitySource,
        #[arg(long)]
        out: PathBuf,
        /// Also write the pairwise divergence tables of the pre-merge
        /// clusters and print them for review.
        #[arg(long)]
        interactive_merge_report: bool,
    },
    /// Search a learned table for subsidiary variable pairs.
    Subsidiary {
        /// Model directory written by `learn`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Learn observational cells and plan (and optionally run) experiments.
    Design {
        /// Observational dataset.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        density: DensitySource,
        #[arg(long)]
        out: PathBuf,
        /// Representatives per observational cell.
        #[arg(long, default_value_t = 1)]
        per_cell: usize,
        /// Run the plan against this exact system.
        #[arg(long)]
        runner_system: Option<PathBuf>,
        /// Trials per planned intervention.
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
    /// Merge observational cells using experiment results.
    Merge {
        /// Directory written by `design`.
        #[arg(long)]
        design: PathBuf,
        /// Results dataset (default: `<design>/results`).
        #[arg(long)]
        results: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = macrocause::designer::DEFAULT_MERGE_TOL)]
        tol: f64,
        #[arg(long, default_value_t = macrocause::designer::DEFAULT_MIN_SAMPLES)]
        min_samples: usize,
    },
    /// Check that causal partitions coarsen observational ones on random systems.
    ValidateCct {
        #[arg(long, default_value_t = 1000)]
        n_systems: usize,
        #[arg(long, default_value_t = 6)]
        m: usize,
        #[arg(long, default_value_t = 6)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = macrocause::discrete::EXACT_TOL)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate, fit, learn, search subsidiaries and write the report bundle.
    RunAll {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_per_class: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct OracleArgs {
    /// Existing system JSON; otherwise a random system is drawn.
    #[arg(long, conflicts_with_all = ["m", "n", "k"])]
    system: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    m: usize,
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
    /// Samples to draw into `<out>/data`.
    #[arg(long, default_value_t = 0)]
    samples: usize,
    /// Draw samples from the joint instead of under uniform interventions.
    #[arg(long)]
    observational: bool,
    #[arg(long, default_value_t = macrocause::discrete::EXACT_TOL)]
    tol: f64,
}

/// Where the conditional density comes from.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct DensitySource {
    /// Density written by `fit-density`.
    #[arg(long)]
    density: Option<PathBuf>,
    /// Use the exact density of this system (one-hot data only).
    #[arg(long)]
    system: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(exit::CONFIG),
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code(&e))
        }
    }
}
