//! Command-line harness for the tomography benchmarks.
//!
//! The binary is a thin wrapper around [`run_from`], which lets tests drive
//! every subcommand in-process and capture its output.

mod args;
mod commands;
pub mod harness;

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;
use thiserror::Error;

pub use args::{Cli, Command, DEFAULT_SEED};
pub use commands::companion_path;

#[derive(Debug, Error)]
pub enum CliError {
    /// Rejected by the argument parser (also used for `--help`).
    #[error(transparent)]
    Clap(#[from] clap::Error),

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Runtime(#[from] qtomo_core::Error),

    #[error("cannot write output: {0}")]
    Output(#[from] std::io::Error),
}

impl CliError {
    /// 0 for help and version output, 1 for usage errors, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Clap(e) if !e.use_stderr() => 0,
            CliError::Clap(_) | CliError::Usage(_) => 1,
            CliError::Runtime(_) | CliError::Output(_) => 2,
        }
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::GenData(a) => commands::gen_data(a, out),
        Command::GenRecord(a) => commands::gen_record(a, out),
        Command::Train(a) => commands::train(a, out),
        Command::BenchScaling(a) => commands::bench_scaling(a, out),
        Command::BenchShots(a) => commands::bench_shots(a, out),
        Command::NoiseCurve(a) => commands::noise_curve_cmd(a, out),
        Command::Reconstruct(a) => commands::reconstruct(a, out),
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run_from<I, T>(args: I, out: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    run(&cli, out)
}
