use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GaitError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GaitError {
    #[error("skeleton: frame {frame}: {reason}")]
    MalformedFrame { frame: usize, reason: String },

    #[error("skeleton: {0}")]
    Skeleton(String),

    #[error("lstm: shape mismatch: {0}")]
    Shape(String),

    #[error("lstm: non-finite value in {gate} gate at step {step}")]
    NonFinite { gate: &'static str, step: usize },

    #[error("autoencoder: {0}")]
    Model(String),

    #[error("training: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("training: {0}")]
    Training(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("gait_index: {0}")]
    Fusion(String),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("config: {0}")]
    Config(String),

    #[error("pipeline: {0}")]
    Pipeline(String),

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

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl GaitError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GaitError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        GaitError::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        GaitError::Csv {
            path: path.into(),
            source,
        }
    }
}
