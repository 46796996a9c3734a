//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, estimation and the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid model wiring (dimensions, names, fixed-loading index).
    #[error("invalid model spec: {0}")]
    Spec(String),

    /// Parameter values violate their domain (negative SDs, length mismatch).
    #[error("invalid parameters: {0}")]
    Params(String),

    /// Dataset violates its invariants (missing values, too few rows).
    #[error("invalid dataset: {0}")]
    Data(String),

    /// Matrix dimensions of two arguments do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A matrix that must be invertible is numerically singular.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// Estimation could not produce the requested quantity.
    #[error("estimation failed: {0}")]
    Estimation(String),

    /// Input rows violating the raw-table schema; one message per row.
    #[error("input validation failed ({} violation{}):\n{}", .0.len(), if .0.len() == 1 { "" } else { "s" }, .0.join("\n"))]
    Violations(Vec<String>),

    /// Configuration file could not be parsed or is incomplete.
    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
