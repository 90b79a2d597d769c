use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, TmmError>;

#[derive(Debug, Error)]
pub enum TmmError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },
}

impl TmmError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TmmError::Io {
            path: path.into(),
            source,
        }
    }
}
