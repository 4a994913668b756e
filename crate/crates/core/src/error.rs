use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error classes, used by the CLI to pick an exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: unknown {kind} `{name}` (not in the training vocabulary)")]
    UnknownSymbol {
        path: PathBuf,
        line: usize,
        kind: &'static str,
        name: String,
    },
    #[error("{kind} id {id} out of range (size {size})")]
    OutOfRange {
        kind: &'static str,
        id: usize,
        size: usize,
    },
    #[error("unsatisfiable: {0}")]
    Unsatisfiable(String),
    #[error("non-finite loss at step {step} (learning rate {learning_rate})")]
    NonFiniteLoss { step: u64, learning_rate: f64 },
    #[error("infinite divergence: p[{index}] = {p} > 0 but q[{index}] = 0")]
    InfiniteDivergence { index: usize, p: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("bad format: {0}")]
    Format(String),
    #[error("{0}")]
    Data(String),
    #[error("missing: {0}")]
    Missing(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Unsatisfiable(_) => ErrorKind::Config,
            Error::NonFiniteLoss { .. } | Error::InfiniteDivergence { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}
