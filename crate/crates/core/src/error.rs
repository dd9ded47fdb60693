use std::fmt;

use thiserror::Error;

/// Identifies a local block of a clique forest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockId {
    Clique(usize),
    Separator(usize),
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockId::Clique(i) => write!(f, "clique {i}"),
            BlockId::Separator(i) => write!(f, "separator {i}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{block} is not positive definite (indices {indices:?})")]
    BlockConditioning { block: BlockId, indices: Vec<usize> },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("invalid clique forest: {0}")]
    InvalidForest(String),

    #[error("EM did not converge after {iterations} iterations (last change {last_change:e})")]
    Convergence {
        iterations: usize,
        last_change: f64,
        state: Box<crate::student::EmState>,
    },

    #[error("ingestion error at row {row}, column {column}: {message}")]
    Ingestion {
        row: usize,
        column: String,
        message: String,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
