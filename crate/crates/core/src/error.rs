use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GviError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GviError {
    #[error("matrix of dimension {dim} is not positive definite (largest jitter tried: {max_jitter:e})")]
    NotPositiveDefinite { dim: usize, max_jitter: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("matrix is not symmetric (max relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("renyi order alpha must lie in the open interval (0, 1), got {0}")]
    AlphaOutOfRange(f64),

    #[error("power c must be strictly positive, got {0}")]
    NonPositivePower(f64),

    #[error("invalid hyperparameter {name} = {value}: {reason}")]
    InvalidHyperparameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("non-finite gradient in parameter block `{block}` at iteration {iteration}")]
    NonFiniteGradient { block: String, iteration: usize },

    #[error("non-finite objective at iteration {iteration} (batch indices {batch:?})")]
    NonFiniteObjective { iteration: usize, batch: Vec<usize> },

    #[error("parse error at row {row}, column {column}: {content:?}")]
    Parse {
        row: usize,
        column: usize,
        content: String,
    },

    #[error("ragged csv: row {row} has {found} fields, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("file {0} contains no data rows")]
    EmptyFile(PathBuf),

    #[error("dataset has {0} usable rows, at least 10 are required")]
    TooFewRows(usize),

    #[error("empty batch")]
    EmptyBatch,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
