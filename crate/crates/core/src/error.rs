use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to parse manifest {path}: {message}")]
    ManifestParse { path: PathBuf, message: String },

    #[error("malformed embedding file {path}: {reason}")]
    EmbeddingFormat { path: PathBuf, reason: String },

    #[error("invalid dataset: {0}")]
    Validation(String),

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("slide `{slide_id}` has no selected patch")]
    CoverageViolation { slide_id: String },

    #[error("label `{0}` is not one of the dataset classes")]
    Label(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("reports were produced from different datasets ({expected} vs {found})")]
    MixedDataset { expected: String, found: String },

    #[error("failed to build worker pool: {0}")]
    WorkerPool(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
