//! The `skyfed` batch runner: placement, trajectory planning, training and
//! parameter sweeps, each writing CSV (and SVG charts) to an output
//! directory.
//!
//! Exit codes: 0 success, 1 usage or invalid input, 2 infeasible scenario,
//! 3 I/O failure.

pub mod args;
mod commands;
pub mod output;
pub mod plan;
pub mod svg;
pub mod sweep;

use std::ffi::OsString;

use clap::Parser;
use skyfed_core::fedsim::SimError;
use thiserror::Error;

pub use args::{Axis, Solver};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Infeasible(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<skyfed_core::Error> for CliError {
    fn from(e: skyfed_core::Error) -> Self {
        if e.is_infeasible() {
            return CliError::Infeasible(e.to_string());
        }
        match e {
            skyfed_core::Error::Sim(SimError::Idx(_)) => CliError::Io(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Size the global worker pool from `SKYFED_THREADS`, if set.
fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("SKYFED_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("SKYFED_THREADS must be a positive integer, got `{v}`")))?;
    // A pool that already exists (repeated in-process calls) is kept.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parse arguments, run the command and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match args::Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match configure_threads().and_then(|_| commands::execute(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
