//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value {value} at index {index} in {context}")]
    NonFinite {
        context: &'static str,
        index: usize,
        value: f64,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },

    #[error("demonstration set is empty")]
    EmptyDemoSet,

    #[error("step {index} carries no constraint-reward annotation")]
    MissingCor { index: usize },

    #[error("episode is over; call reset before stepping")]
    EpisodeOver,

    #[error("environment has not been reset")]
    NotReset,

    #[error("non-finite activation in layer {layer} of {network}")]
    NonFiniteLayer { network: &'static str, layer: usize },

    #[error("singular linear system in {context}")]
    SingularSystem { context: &'static str },

    #[error("non-finite loss in {context} at batch {batch}")]
    NonFiniteLoss { context: &'static str, batch: u64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("referenced file does not exist: {0}")]
    MissingFile(PathBuf),

    #[error("parse error at {path}:{line}: {why}")]
    Parse {
        path: String,
        line: usize,
        why: String,
    },

    #[error("pipeline stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 for configuration problems, 2 for
    /// runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::MissingFile(_) | Error::Json(_) => 1,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
