use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {file} at byte {offset}: {message}")]
    Parse {
        file: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("unknown label `{label}` for taxonomy `{taxonomy}`")]
    UnknownLabel { taxonomy: String, label: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("out of bounds: {0}")]
    Bounds(String),

    #[error("clip contract violated: expected {expected} samples at 16 kHz, got {actual}")]
    ClipContract { expected: usize, actual: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("encoder backend `{backend}` unavailable: {hint}")]
    BackendUnavailable { backend: String, hint: String },

    #[error("checksum mismatch for cache entry {0}")]
    Checksum(String),

    #[error("class `{0}` has no samples")]
    AbsentClass(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite loss in {phase} epoch {epoch} (batch {batch})")]
    NonFiniteLoss {
        phase: &'static str,
        epoch: usize,
        batch: usize,
    },

    #[error("training for fold {fold} failed: {source}")]
    FoldFailed {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate labels: {0}")]
    Degenerate(String),

    #[error("checkpoint config hash mismatch: file has {found}, expected {expected}")]
    ConfigMismatch { expected: String, found: String },

    #[error("model is not fitted: {0}")]
    NotFitted(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
