//! `olss`: record teacher trajectories, train schedulers, sample, and evaluate.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or output location; exit code 1.
    Usage(String),
    /// The computation or its data failed; exit code 2.
    Runtime(olss::Error),
}

impl From<olss::Error> for CliError {
    fn from(e: olss::Error) -> Self {
        CliError::Runtime(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "olss", version, about = "Least-squares subspace schedulers for diffusion sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Worker threads for parallel stages.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Record K deterministic teacher trajectories.
    Record {
        #[command(flatten)]
        common: Common,
        /// Seed of the first trajectory; trajectory k uses seed + k.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of trajectories (K).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Fit an OLSS scheduler to recorded trajectories.
    Train {
        #[command(flatten)]
        common: Common,
        /// Trajectory directory written by `record`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        /// `optimized` searches the step path, `uniform` keeps evenly spaced steps.
        #[arg(long)]
        mode: Option<olss::olss::TrainMode>,
        /// Search tolerance, relative to the uniform path's worst residual.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Read --epsilon as an absolute residual.
        #[arg(long, requires = "epsilon")]
        absolute: bool,
    },
    /// Draw samples with a trained scheduler.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Scheduler JSON written by `train`.
        #[arg(long)]
        scheduler: PathBuf,
        /// Seed of the first sample's starting noise.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Compare DDIM, PNDM, OLSS-P and OLSS against held-out teacher runs.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// First held-out seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated step counts.
        #[arg(long, value_delimiter = ',')]
        steps: Option<Vec<usize>>,
        /// Also time OLSS over the sweep step counts.
        #[arg(long)]
        sweep: bool,
    },
    /// Export correlation heat map, PCA paths and redundancy summary.
    Viz {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Trajectory index used for the heat map and PCA.
        #[arg(long, default_value_t = 0)]
        trajectory: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
