//! `semiblind` binary: dataset generation, mixture fitting, NMSE sweeps and
//! filter-precompute timing runs, all driven by one TOML config.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use semiblind::cli::{
    cmd_bench, cmd_fit, cmd_generate, cmd_sweep, load_config, OutTarget, Overrides,
};
use semiblind::error::Result;

#[derive(Parser)]
#[command(
    name = "semiblind",
    about = "Semi-blind multi-user MIMO channel estimation simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Redirect the command's primary output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat config override, e.g. --set gmm.component_count=16 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/test channel datasets (CVD1 files).
    Generate {
        #[command(flatten)]
        common: Common,
        /// Training sample count override.
        #[arg(long)]
        count: Option<usize>,
        /// Test sample count override.
        #[arg(long)]
        test_count: Option<usize>,
    },
    /// Fit the Gaussian mixture on the training dataset (GMM1 file).
    Fit {
        #[command(flatten)]
        common: Common,
    },
    /// Run the configured NMSE sweep and write the results CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Monte-Carlo trial count override.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Time the GMM estimator variants and write the timing CSV.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Repetitions per measurement.
        #[arg(long)]
        repetitions: Option<usize>,
    },
}

fn overrides_from(common: &Common) -> Overrides {
    Overrides {
        seed: common.seed,
        out: common.out.clone(),
        sets: common.sets.clone(),
        ..Default::default()
    }
}

fn setup_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| semiblind::Error::InvalidState(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate { common, count, test_count } => {
            setup_threads(common.threads)?;
            let mut overrides = overrides_from(&common);
            overrides.count = count;
            overrides.test_count = test_count;
            let config = load_config(&common.config, &overrides, OutTarget::None)?;
            let summary = cmd_generate(&config)?;
            println!(
                "wrote {} ({} samples, M={}, mean power {:.3})",
                summary.train_path.display(),
                summary.train_count,
                summary.antennas,
                summary.train_mean_power
            );
            println!(
                "wrote {} ({} samples, M={}, mean power {:.3})",
                summary.test_path.display(),
                summary.test_count,
                summary.antennas,
                summary.test_mean_power
            );
        }
        Command::Fit { common } => {
            setup_threads(common.threads)?;
            let overrides = overrides_from(&common);
            let config = load_config(&common.config, &overrides, OutTarget::ModelPath)?;
            let summary = cmd_fit(&config)?;
            println!(
                "fitted K={} on M={} in {} iterations (final log-likelihood {:.6e}, converged: {})",
                summary.components,
                summary.dimension,
                summary.iterations,
                summary.final_log_likelihood,
                summary.converged
            );
            println!("wrote {}", summary.model_path.display());
            println!("wrote {}", summary.report_path.display());
        }
        Command::Sweep { common, trials } => {
            setup_threads(common.threads)?;
            let mut overrides = overrides_from(&common);
            overrides.trials = trials;
            let config = load_config(&common.config, &overrides, OutTarget::OutputPath)?;
            let summary = cmd_sweep(&config)?;
            println!(
                "wrote {} ({} grid points x {} estimators, {} trials each)",
                summary.output_path.display(),
                summary.grid_points,
                summary.estimators,
                summary.trials
            );
        }
        Command::Bench { common, repetitions } => {
            setup_threads(common.threads)?;
            let mut overrides = overrides_from(&common);
            overrides.repetitions = repetitions;
            let config = load_config(&common.config, &overrides, OutTarget::OutputPath)?;
            let summary = cmd_bench(&config)?;
            println!("wrote {} ({} rows)", summary.output_path.display(), summary.rows);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error[{}]: {}", err.code(), err);
            ExitCode::FAILURE
        }
    }
}
