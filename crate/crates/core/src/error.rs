use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("ordinal value {value} out of range [0, {max}] in {what} at row {row}, column {col}")]
    OrdinalOutOfRange {
        what: &'static str,
        row: usize,
        col: usize,
        value: i64,
        max: usize,
    },

    #[error("non-finite value in {what} at row {row}, column {col}")]
    NonFinite {
        what: &'static str,
        row: usize,
        col: usize,
    },

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("kernel matrix could not be factorized (last jitter {jitter:e})")]
    IllConditionedKernel { jitter: f64 },

    #[error("numerical inconsistency: {0}")]
    NumericalInconsistency(String),

    #[error("invalid block design: {0}")]
    InvalidDesign(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Evaluation(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
