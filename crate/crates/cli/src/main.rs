//! `stgf` — config-driven training and evaluation pipeline for
//! spatial-temporal graph forecasting.
//!
//! Exit codes: 0 success, 2 input/config error, 3 state/compatibility error
//! (locked run directory, missing prerequisite artifact, incompatible
//! checkpoint), 1 anything else.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use stgf_core::Error;

#[derive(Parser)]
#[command(
    name = "stgf",
    about = "Spatial-temporal graph forecasting pipeline",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (sectioned key = value).
    #[arg(long)]
    config: PathBuf,
    /// Override the [train] seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the config, ingest the dataset and populate the cache.
    Ingest(Common),
    /// Build the configured graph into the cache.
    BuildGraph(Common),
    /// Train the configured model; writes checkpoint, log and metrics.
    Train(Common),
    /// Re-evaluate a checkpoint on the test split.
    Evaluate(Common),
    /// Train every configured model plus baselines; emit comparison tables.
    Benchmark(Common),
    /// Collect run logs into plot-ready CSVs.
    Report(Common),
}

fn run() -> stgf_core::Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Ingest(c) => commands::cmd_ingest(&RunConfig::load(&c.config)?),
        Command::BuildGraph(c) => commands::cmd_build_graph(&RunConfig::load(&c.config)?),
        Command::Train(c) => commands::cmd_train(&RunConfig::load(&c.config)?, c.seed),
        Command::Evaluate(c) => commands::cmd_evaluate(&RunConfig::load(&c.config)?, c.seed),
        Command::Benchmark(c) => commands::cmd_benchmark(&RunConfig::load(&c.config)?, c.seed),
        Command::Report(c) => commands::cmd_report(&RunConfig::load(&c.config)?),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config(_) | Error::Input(_) => ExitCode::from(2),
                Error::State(_) => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}
