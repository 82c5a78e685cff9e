//! Command-line harness around the `eulerkv` solver: TOML run
//! configurations, a CSV/snapshot-emitting scenario runner, bulk-modulus
//! and transport-regularization sweeps, and a property-check battery.
//!
//! The library half exists so integration tests can drive the exact code
//! paths the binary uses; `main.rs` only parses arguments and maps errors
//! to exit codes.

pub mod config;
pub mod output;
pub mod runner;
pub mod sweep;
pub mod verify;

use std::path::PathBuf;

use thiserror::Error;

/// Failures the binary maps to exit codes: configuration problems exit
/// with 2, I/O problems with 1. Numerical aborts are not errors at this
/// level; the runner reports them in its outcome so partial output is
/// still written before the process exits with 3.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] config::ConfigError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}
