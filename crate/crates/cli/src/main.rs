//! `acdn`: anycast CDN measurement pipeline.
//!
//! Subcommands compose through files: `simulate` produces synthetic
//! campaigns and flow logs with ground truth, `detect`/`census` run the
//! active methodology, `ingest`/`analyze`/`events` run the passive one, and
//! `report` merges both into one table. Identical seed and config give
//! byte-identical artifacts.

mod commands;
mod config;
mod util;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use crate::config::Cli;

/// Failure classes map to exit codes: usage 1, data 2, internal 3.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(anyhow::Error),
    Internal(String),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Data(e)
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };

    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(CliError::Internal(message)) => {
            eprintln!("internal invariant violation: {message}");
            ExitCode::from(3)
        }
    }
}
