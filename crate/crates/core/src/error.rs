use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    /// Factorization failed even after the jitter ladder was exhausted.
    #[error(
        "numerical failure in {context}: matrix of size {size} not positive definite \
         (last pivot {pivot:e}, jitter {jitter:e}, diagonal range [{min_diag:e}, {max_diag:e}])"
    )]
    NumericalFailure {
        context: &'static str,
        size: usize,
        pivot: f64,
        jitter: f64,
        min_diag: f64,
        max_diag: f64,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
