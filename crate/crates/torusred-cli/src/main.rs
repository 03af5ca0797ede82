//! `torusred` — verify, benchmark, and model the collectives, dump training
//! schedules, and run the data-parallel training equivalence simulation.
//!
//! Exit codes: 0 success, 1 verification/tolerance failure, 2 usage or
//! configuration error, 3 transport failure.

mod commands;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use torusred::collectives::CollectiveError;
use torusred::transport::TransportError;

#[derive(Parser)]
#[command(
    name = "torusred",
    version,
    about = "2D-torus, ring, and hierarchical all-reduce toolbox"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check all collectives against the sequential-sum oracle.
    Verify(commands::verify::VerifyArgs),
    /// Measure all-reduce latency and bandwidth.
    Bench(commands::bench::BenchArgs),
    /// Emit step/volume traces and predicted times.
    Cost(commands::cost::CostArgs),
    /// Dump per-epoch learning-rate/momentum/batch tables.
    Schedule(commands::schedule::ScheduleArgs),
    /// Compare distributed training against single-process training.
    Trainsim(commands::trainsim::TrainsimArgs),
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Verify(args) => commands::verify::run(args),
        Command::Bench(args) => commands::bench::run(args),
        Command::Cost(args) => commands::cost::run(args),
        Command::Schedule(args) => commands::schedule::run(args),
        Command::Trainsim(args) => commands::trainsim::run(args),
    }
}

/// Transport problems exit 3; everything else that errors out is a usage or
/// configuration problem and exits 2.
fn classify(err: &anyhow::Error) -> ExitCode {
    for cause in err.chain() {
        if cause.downcast_ref::<TransportError>().is_some() {
            return ExitCode::from(3);
        }
        if matches!(
            cause.downcast_ref::<CollectiveError>(),
            Some(CollectiveError::Transport(_))
        ) {
            return ExitCode::from(3);
        }
    }
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            classify(&err)
        }
    }
}
