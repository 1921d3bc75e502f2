use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("malformed payload {path}: {reason}")]
    Payload { path: PathBuf, reason: String },
    #[error("manifest error in {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid model specification: {0}")]
    ModelSpec(String),
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f32 },
    #[error("constant targets: R² is undefined")]
    ConstantTargets,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("attribution error: {0}")]
    Attribution(String),
    #[error("deletion curve error: {0}")]
    Curve(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
