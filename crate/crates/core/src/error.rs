use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the tensor engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {message}")]
    InvalidArgument { op: &'static str, message: String },
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("backward was already run on this graph")]
    BackwardAlreadyRun,
}

/// Errors from the data pipeline, models, training and evaluation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("neuron `{0}` not present in recording")]
    MissingNeuron(String),
    #[error("{0}")]
    Shape(String),
    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),
    #[error("{0}")]
    Unsupported(String),
    #[error("io error on {path}: {source}")]
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

    pub fn config(message: impl Into<String>) -> Self {
        Error::InvalidConfig(message.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
