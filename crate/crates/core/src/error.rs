use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("code construction failed: {0}")]
    CodeConstruction(String),

    #[error("bitstream truncated after {decoded} of {expected} symbols")]
    Truncated { decoded: usize, expected: usize },

    #[error("invalid probability model: {0}")]
    Model(String),

    #[error("training diverged at step {step}: loss {loss:.6e} exceeds 10x initial {initial:.6e}")]
    Divergence {
        step: usize,
        loss: f64,
        initial: f64,
    },

    #[error("weights file: {0}")]
    Weights(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
