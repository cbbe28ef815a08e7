use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the guard pipeline.
///
/// Every variant maps onto a short machine-readable kind via [`Error::kind`],
/// which the CLI prints on failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed rollout batch: {0}")]
    MalformedBatch(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient history: need at least {needed} checkpoints, got {got}")]
    InsufficientHistory { needed: usize, got: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("report error: {0}")]
    Report(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MalformedBatch(_) => "malformed-batch",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::InsufficientHistory { .. } => "insufficient-history",
            Error::Parse { .. } => "parse",
            Error::Report(_) => "report",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
