use std::path::PathBuf;

/// Errors produced by model construction, the solvers and the I/O layer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch between {left} and {right}: expected {expected}, found {found}")]
    DimensionMismatch {
        left: &'static str,
        right: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("{what} is not positive definite")]
    NotPositiveDefinite { what: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("the nonzero set of the current iterate is empty; no face to restrict to")]
    EmptyFace,

    #[error("line search found no sufficient decrease after {0} halvings")]
    LineSearchFailed(usize),

    #[error("conjugate gradient breakdown (non-positive curvature {0:e})")]
    CgBreakdown(f64),

    #[error("no sign pattern yields a feasible stationary point")]
    Infeasible,

    #[error("oracle limited to {limit} stacked variables, got {found}")]
    TooLarge { limit: usize, found: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed problem file: {0}")]
    Format(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(left: &'static str, right: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            left,
            right,
            expected,
            found,
        });
    }
    Ok(())
}
