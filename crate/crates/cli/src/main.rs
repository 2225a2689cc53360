//! `multidetect`: calibrate, run and check the multi-stream detection and
//! identification rule from the command line.
//!
//! Exit codes: 0 success or alarm, 2 usage or data error, 3 censored,
//! 4 bound-check failure.

mod commands;
mod config;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{PathRequest, Status};
use config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "multidetect", version, about)]
struct Cli {
    /// TOML run configuration; defaults describe a two-stream Gaussian setup.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "N")]
    trials: Option<usize>,
    /// Worker cap for Monte Carlo runs.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Directory for report artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Keep only the most recent L candidate change points.
    #[arg(long, global = true, value_name = "L")]
    window: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print thresholds, bounds and delay approximations as JSON.
    Calibrate,
    /// Run the Monte Carlo experiment and write report.json / report.csv.
    Simulate {
        /// Write one synthetic data CSV here instead of running the experiment.
        #[arg(long, value_name = "FILE")]
        emit_path: Option<PathBuf>,
        /// Stream that changes in the emitted path (1-based).
        #[arg(long, default_value_t = 1, requires = "emit_path")]
        stream: usize,
        /// Change point of the emitted path.
        #[arg(long, default_value_t = 50, allow_negative_numbers = true, requires = "emit_path")]
        nu: i64,
        /// Post-change parameter; defaults to the first experiment theta.
        #[arg(long, requires = "emit_path")]
        theta: Option<f64>,
        /// Length of the emitted path; defaults to the experiment horizon.
        #[arg(long, requires = "emit_path")]
        length: Option<usize>,
    },
    /// Run the rule over a data CSV and print the verdict as JSON.
    Detect {
        /// CSV with header t,stream_1,...,stream_N.
        data: PathBuf,
        /// Dump every statistic frame as CSV (n,stream,j,logLambdaBar).
        #[arg(long, value_name = "FILE")]
        frames: Option<PathBuf>,
    },
    /// Check the law-of-large-numbers conditions and optional delay ladder.
    Validate,
    /// Re-check the bounds recorded in an existing report.json.
    Report { report: PathBuf },
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    if let Command::Report { report } = &cli.command {
        return commands::report(report);
    }
    let overrides = Overrides {
        seed: cli.seed,
        trials: cli.trials,
        threads: cli.threads,
        out: cli.out,
        window: cli.window,
    };
    let config = RunConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Calibrate => commands::calibrate(&config),
        Command::Simulate {
            emit_path: Some(out),
            stream,
            nu,
            theta,
            length,
        } => commands::emit_path(
            &config,
            PathRequest {
                stream,
                nu,
                theta,
                length,
            },
            &out,
        ),
        Command::Simulate { emit_path: None, .. } => commands::simulate(&config),
        Command::Detect { data, frames } => commands::detect(&config, &data, frames.as_deref()),
        Command::Validate => commands::validate(&config),
        Command::Report { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(status) => ExitCode::from(status.code()),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
