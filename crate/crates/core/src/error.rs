use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HqhError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HqhError {
    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: &'static str, index: usize },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("input is not centered: mean norm {mean_norm:e} exceeds {limit:e}")]
    NotCentered { mean_norm: f64, limit: f64 },

    #[error("degenerate spectrum: principal directions {directions:?} carry no variance")]
    DegenerateSpectrum { directions: Vec<usize> },

    #[error("matrix is not orthonormal: residual {residual:e} exceeds {limit:e}")]
    NotOrthonormal { residual: f64, limit: f64 },

    #[error("matrix is not positive semidefinite: smallest eigenvalue {min_eigenvalue:e}")]
    NotPsd { min_eigenvalue: f64 },

    #[error("{method} did not converge after {iterations} iterations")]
    NoConvergence {
        method: &'static str,
        iterations: usize,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("operation not supported: {0}")]
    Unsupported(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    VersionMismatch { expected: String, found: String },

    #[error("file truncated in section `{section}` at byte offset {offset}")]
    Truncated { section: &'static str, offset: u64 },

    #[error("checksum mismatch in section `{section}`")]
    Checksum { section: &'static str },

    #[error("malformed {format} at {location}: {message}")]
    Parse {
        format: &'static str,
        location: String,
        message: String,
    },
}

impl HqhError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HqhError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        HqhError::InvalidInput(msg.into())
    }
}

pub(crate) fn ensure_finite(values: &[f64], context: &'static str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(HqhError::NonFinite { context, index }),
        None => Ok(()),
    }
}

pub(crate) fn ensure_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(HqhError::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
