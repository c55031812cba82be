use thiserror::Error;

/// Crate-wide error type.
///
/// Variants group into the classes the CLI maps to exit codes:
/// parse/validation (`Parse`, `Program`), data (`Shape`, `Parameter`,
/// `TimeIndex`, `EmptyOutput`, `InsufficientData`, `Solver`, `Metric`,
/// `Protocol`, I/O) and capacity (`Capacity`).
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },

    #[error("invalid program: {0}")]
    Program(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("time index must be strictly increasing (violated at position {0})")]
    TimeIndex(usize),

    #[error("empty output: {0}")]
    EmptyOutput(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
