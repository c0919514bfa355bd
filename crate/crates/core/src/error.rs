use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("angle bin {bin} out of range for {bins} bins")]
    BinOutOfRange { bin: usize, bins: usize },

    #[error("label index {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("detection {index} has no predicted IoU")]
    MissingPredictedIou { index: usize },

    #[error("oracle ranking requires ground-truth boxes")]
    MissingGroundTruth,

    #[error("proposal {index} has no matched ground truth")]
    UnmatchedProposal { index: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("velodyne buffer has {trailing} trailing bytes at offset {offset}")]
    TrailingBytes { offset: usize, trailing: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("could not place {requested} objects without overlap after {attempts} attempts")]
    InfeasiblePacking { requested: usize, attempts: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("no scenes found in {0}")]
    NoScenes(PathBuf),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
