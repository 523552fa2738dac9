use std::path::PathBuf;

use thiserror::Error;

/// Failures while reading or assembling a dataset.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing {what} file ({})", path.display())]
    MissingFile { what: &'static str, path: PathBuf },
    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("unknown entity `{label}` in {split} assertions (line {line})")]
    UnknownEntity {
        label: String,
        split: &'static str,
        line: usize,
    },
    #[error("empty type label")]
    EmptyLabel,
    #[error("label `{0}` collides with a synthesized relation label")]
    LabelCollision(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Failures while reading or writing a checkpoint file.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    NotACheckpoint,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("vocabulary fingerprint mismatch for {table} table")]
    FingerprintMismatch { table: &'static str },
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("malformed checkpoint metadata: {0}")]
    Metadata(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Failures that abort a training run.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, step {step}; batch entities: {entities:?}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        entities: Vec<String>,
    },
    #[error(transparent)]
    Data(#[from] DataError),
}
