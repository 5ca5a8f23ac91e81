use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or incompatible shapes.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {op} got {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("degenerate batch: channel statistics need at least two elements, got {0}")]
    DegenerateBatch(usize),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("every pixel of the target is ignored")]
    EmptyTarget,

    #[error("label {label} at pixel {index} is outside [0, {classes})")]
    InvalidLabel {
        label: u8,
        index: usize,
        classes: usize,
    },

    /// Contract violation in the autodiff tape.
    #[error("tape error: {0}")]
    Tape(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("dataset format error in {path}: {reason}")]
    DatasetFormat { path: PathBuf, reason: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("optimizer error: {0}")]
    Optimizer(String),

    #[error("training diverged at batch {batch} of epoch {epoch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::DatasetFormat {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Diverged { .. } => 3,
            Error::Io { .. } => 4,
            _ => 2,
        }
    }
}
