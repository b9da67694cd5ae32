use std::io;

use thiserror::Error;

use crate::collectives::CollectiveError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised while reading a libsvm-format dataset.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("input contains no samples")]
    EmptyFile,
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: feature index {index} does not follow {previous}")]
    NonAscendingIndex {
        line: usize,
        index: usize,
        previous: usize,
    },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("invalid configuration: {field}: {reason}")]
    Config { field: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {found} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("empty sample subset")]
    EmptySubset,

    #[error(transparent)]
    Collective(#[from] CollectiveError),

    #[error("preconditioner factorization failed: Gram matrix of order {order} is not positive definite")]
    SingularGram { order: usize },

    #[error("curvature <u, Hu> = {value:e} is not positive at inner iteration {iteration}")]
    NotPositiveDefinite { iteration: usize, value: f64 },

    #[error("PCG did not reach residual {eps:e} within {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        eps: f64,
    },

    #[error("objective became non-finite at outer iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("protocol violation: {reason}")]
    Protocol { reason: String },
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Config {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                what,
                expected,
                found,
            })
        }
    }
}
