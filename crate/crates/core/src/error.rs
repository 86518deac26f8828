use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: missing required column `{0}`")]
    Schema(String),

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("lookup failed for `{0}`")]
    Lookup(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("unknown id `{0}`")]
    Reference(String),

    #[error("perplexity calibration failed for row {row}: {message}")]
    Calibration { row: usize, message: String },

    #[error("t-SNE diverged at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("missing input {path}: run the `{stage}` stage first")]
    MissingStage { stage: String, path: PathBuf },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
