use std::path::PathBuf;

use thiserror::Error;

use crate::types::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed array header: {0}")]
    MalformedHeader(String),

    #[error("dtype mismatch: expected {expected}, found {found}")]
    DtypeMismatch { expected: String, found: String },

    #[error("truncated payload: expected {expected} elements")]
    Truncated { expected: u64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invariant violated: {0}")]
    Invalid(Violation),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    #[error("at least two cardiac triggers are required, found {0}")]
    TooFewTriggers(usize),

    #[error("cardiac phase(s) {phases:?} contain no spokes after gating/undersampling")]
    EmptyPhases { phases: Vec<usize> },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("trajectory is not radial: {0}")]
    NonRadial(String),

    #[error("iteration diverged: {0}")]
    Diverged(String),

    #[error("weight file: {0}")]
    Weights(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }
}

impl From<Violation> for Error {
    fn from(v: Violation) -> Self {
        Error::Invalid(v)
    }
}
