//! Error types shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corpus metadata not found under {0}")]
    MetadataNotFound(PathBuf),

    #[error("corpus metadata invalid: {0}")]
    MetadataInvalid(String),

    #[error("audio file missing for clip {clip_id}: {path}")]
    MissingAudioFile { clip_id: String, path: PathBuf },

    #[error("duplicate clip id {0} in manifest")]
    DuplicateClipId(String),

    #[error("class {0} has no clips")]
    EmptyClass(usize),

    #[error("failed to decode clip {clip_id}: {reason}")]
    Decode { clip_id: String, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("split ratios unsatisfiable: {0}")]
    SplitUnsatisfiable(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("model configuration rejected: {0}")]
    ModelConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("experiment configuration error: {0}")]
    Config(String),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 configuration, 2 data, 3 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::ModelConfig(_) | Error::Config(_) => 1,
            Error::TrainingDiverged(_) => 3,
            _ => 2,
        }
    }
}
