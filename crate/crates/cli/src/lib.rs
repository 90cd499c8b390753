//! Experiment driver behind the `ais` binary: configuration, the
//! subcommands, CSV reports and parameter files.

use std::path::PathBuf;

use ais_core::objective::ObjectiveError;
use ais_core::path::PathError;
use ais_core::sampler::SamplerError;
use ais_core::targets::TargetError;
use thiserror::Error;

pub mod commands;
pub mod config;
pub mod params_io;
pub mod report;

pub use commands::{run_command, Command};
pub use config::{ConfigArgs, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{key}: {message}")]
    Config { key: String, message: String },
    #[error("{path}: {message}")]
    Params { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: header {found:?} does not match {expected:?}; pass --overwrite to replace the file")]
    Schema {
        path: PathBuf,
        found: String,
        expected: String,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("training diverged at epoch {epoch}; last finite parameters saved to {}", checkpoint.display())]
    Diverged { epoch: usize, checkpoint: PathBuf },
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

impl CliError {
    /// 1 for bad input, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Params { .. } => 1,
            _ => 2,
        }
    }
}
