//! Configuration, orchestration, trace persistence and self-checks for the
//! `pact-sim` binary.

use std::path::PathBuf;

use thiserror::Error;

pub mod checks;
pub mod commands;
pub mod config;
pub mod store;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config field {field}: {message}")]
    Config { field: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Trace {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Codec(#[from] pact_core::codec::CodecError),
    #[error(transparent)]
    Metrics(#[from] pact_core::metrics::MetricsError),
    #[error(transparent)]
    Rollout(#[from] pact_core::rollout::RolloutError),
    #[error(transparent)]
    Bridge(#[from] pact_bridge::BridgeError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("no manifests found in {0}")]
    NoTraces(PathBuf),
    #[error("traces come from different configs (pass --force to merge anyway): {}", .0.join(", "))]
    HashMismatch(Vec<String>),
    #[error("impact mode found no never-ask partner for: {}", .0.join(", "))]
    Unpaired(Vec<String>),
    #[error("{} cell(s) failed: {}", .0.len(), .0.join("; "))]
    CellsFailed(Vec<String>),
    #[error("{0} self-check(s) failed")]
    ChecksFailed(usize),
}
