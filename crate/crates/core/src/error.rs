use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("distribution has zero total amplitude")]
    DegenerateDistribution,

    #[error("no distribution mass inside the [{lo}, {hi}] ms window")]
    DegenerateWindow { lo: f64, hi: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// The active-set solver hit its iteration cap; `best` is the last feasible iterate.
    #[error("NNLS did not converge within {iterations} iterations")]
    NnlsConvergence { iterations: usize, best: Vec<f64> },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("missing input {}", .0.display())]
    MissingInput(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
