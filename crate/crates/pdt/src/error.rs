//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shape or axis mismatch in a tensor operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Invalid configuration value or unknown config key.
    #[error("config error: {0}")]
    Config(String),

    /// Invalid argument to an operation (labels, empty score lists, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Malformed container file, bad magic, truncation, checkpoint mismatch.
    #[error("format error: {0}")]
    Format(String),

    /// Dataset / manifest problems (too few identities, missing modality, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Numerically degenerate input (zero-norm row, zero median distance).
    #[error("numeric degeneracy: {0}")]
    NumericDegenerate(String),

    /// Non-finite loss during training; carries diagnostics.
    #[error("numeric abort at epoch {epoch}, batch {batch}: loss = {loss}; history = {history:?}")]
    NumericAbort {
        epoch: usize,
        batch: usize,
        loss: f64,
        history: Vec<f64>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable process exit code for the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. } => 3,
            Error::NumericAbort { .. } | Error::NumericDegenerate(_) => 4,
            _ => 1,
        }
    }
}
