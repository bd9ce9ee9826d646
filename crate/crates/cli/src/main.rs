//! Command-line experiment runner.
//!
//! Exit codes: 0 success, 1 failed check or run, 2 configuration error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Failed(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Failed(_) | CliError::Io(_) => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "rre-gossip", version, about = "Gossip Kalman filter experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check stabilizability, detectability, the matching chain and dissemination.
    Validate(Common),
    /// Sample the covariance law over the rate grid; writes measure.csv and cdf.csv.
    Measure(Common),
    /// Rare-event exponents with large-deviation bounds; writes exponents.csv.
    Ld(Common),
    /// Dump one run's per-sensor covariance path; writes trajectory.csv.
    Trace(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long, env = "RRE_GOSSIP_SEED")]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn context(common: &Common) -> Result<commands::Context, CliError> {
    let loaded = config::load(&common.config)?;
    let workers = common
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(CliError::Config("--workers must be at least 1".into()));
    }
    Ok(commands::Context {
        seed: common.seed.unwrap_or(loaded.config.seed),
        out_dir: common.out.clone().unwrap_or_else(|| loaded.config.out_dir.clone()),
        workers,
        loaded,
    })
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Validate(c) => commands::validate(&context(c)?),
        Command::Measure(c) => commands::measure(&context(c)?),
        Command::Ld(c) => commands::ld(&context(c)?),
        Command::Trace(c) => commands::trace(&context(c)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
