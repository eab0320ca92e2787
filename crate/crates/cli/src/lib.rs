//! Command-line front end for `mlmc-core`.
//!
//! Every run writes its artifacts and a `manifest.json` into `--out`;
//! `--manifest` replays a run from such a file.

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::Parser;

mod commands;
pub mod config;

pub use config::{Cli, CommandName, ModelName, RunConfig, Runtime};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] mlmc_core::Error),
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_runtime() => 2,
            CliError::Core(_) => 1,
            CliError::CheckFailed(_) => 2,
        }
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match cli.command.resolve().and_then(|(cfg, rt)| execute(&cfg, &rt)) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a resolved configuration on a pool of `rt.workers` threads and
/// returns the one-line summary.
pub fn execute(cfg: &RunConfig, rt: &Runtime) -> Result<String, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(rt.workers)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} workers: {e}", rt.workers)))?;
    pool.install(|| commands::dispatch(cfg, rt))
}
