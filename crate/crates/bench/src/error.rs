//! Error types for suites, synthesis and benchmarking.

use std::path::PathBuf;

use thiserror::Error;
use tvm_core::{ParseError, VmError};

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: ParseError },
    #[error("{path}: invalid manifest: {source}")]
    Manifest {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("subprogram `{0}` appears twice in one suite")]
    Duplicate(String),
    #[error("subprogram `{name}` has a non-alphanumeric name")]
    BadName { name: String },
    #[error("subprogram `{name}`: entry method takes arguments")]
    EntryArgs { name: String },
    #[error("iteration count for `{0}` must be at least 1")]
    ZeroIterations(String),
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("empty suite")]
    EmptySuite,
    #[error(transparent)]
    Suite(#[from] SuiteError),
    #[error("subprogram `{name}` failed: {source}")]
    Subprogram { name: String, source: VmError },
    #[error("degenerate fit: need at least 3 methods, got {0}")]
    TooFewPoints(usize),
    #[error("target r2 {0} is outside (0, 1]")]
    BadTarget(f64),
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("iterations_total must be at least 2, got {0}")]
    TooFewIterations(usize),
    #[error("no modes configured")]
    NoModes,
    #[error(transparent)]
    UnknownMode(#[from] tvm_core::vm::UnknownMode),
    #[error(transparent)]
    Suite(#[from] SuiteError),
    #[error("mode `{0}` has no results")]
    MissingMode(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}
