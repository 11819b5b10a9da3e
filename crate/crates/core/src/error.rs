use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CapError>;

#[derive(Debug, Error)]
pub enum CapError {
    #[error("dimension mismatch in {op}: expected {expected}, found {found}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("SVD did not converge after {sweeps} sweeps (max off-diagonal cosine {residual:e})")]
    SvdNonConvergence { sweeps: usize, residual: f64 },

    #[error("RPCA did not converge after {iterations} iterations (relative residual {residual:e})")]
    RpcaNonConvergence { iterations: usize, residual: f64 },

    #[error("invalid budget: {0}")]
    InvalidBudget(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("problem too large for enumeration: {n} candidates (limit {limit})")]
    TooLarge { n: usize, limit: usize },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("usage: {0}")]
    Usage(String),
}

impl CapError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CapError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        CapError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, expected: (usize, usize), found: (usize, usize)) -> Self {
        CapError::DimensionMismatch {
            op,
            expected: format!("{}x{}", expected.0, expected.1),
            found: format!("{}x{}", found.0, found.1),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            CapError::Usage(_) | CapError::InvalidConfig(_) | CapError::InvalidBudget(_) => 2,
            CapError::Format { .. } => 3,
            CapError::RpcaNonConvergence { .. } | CapError::SvdNonConvergence { .. } => 4,
            CapError::Io { .. } => 5,
            _ => 1,
        }
    }
}
