//! Error type shared by every stage of the pipeline.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid group structure: {0}")]
    Groups(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("rank deficient design: {0}")]
    RankDeficient(String),

    /// The selection step returned no active group, so there is nothing to
    /// infer about.
    #[error("empty selection: no group was selected")]
    EmptySelection,

    #[error("solver did not converge after {iters} iterations (residual {residual:.3e})")]
    NonConvergence { iters: usize, residual: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("stale or corrupt selection file: {0}")]
    Digest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::EmptySelection => 2,
            Error::NotPositiveDefinite(_)
            | Error::RankDeficient(_)
            | Error::NonConvergence { .. }
            | Error::Numerical(_) => 3,
            _ => 4,
        }
    }
}
