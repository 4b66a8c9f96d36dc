//! Command layer of `dhlab`: configuration, result envelopes, CSV output
//! and the fixed-point cache.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cache;
pub mod commands;
pub mod config;
pub mod output;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use commands::{run, Command, Outcome};
pub use config::{Overrides, RunConfig};
pub use output::{write_outputs, ResultEnvelope, SCHEMA_VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_CONVERGENCE: i32 = 3;
pub const EXIT_THRESHOLD: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cli_io: config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] dhlab_core::Error),
    #[error("cli_io: {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cli_io: json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn code(&self) -> String {
        match self {
            CliError::Config(_) => "cli_io.config".into(),
            CliError::Core(e) => e.code(),
            CliError::Io { .. } => "cli_io.io".into(),
            CliError::Json(_) => "cli_io.json".into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_VALIDATION,
            CliError::Core(e) if e.is_validation() => EXIT_VALIDATION,
            CliError::Core(e) if e.is_convergence() => EXIT_CONVERGENCE,
            _ => EXIT_FAILURE,
        }
    }
}
