//! Error taxonomy shared across the pipeline.
//!
//! The variants map onto the CLI exit codes: configuration problems (2),
//! data/ingestion problems (3) and numerical failures (4).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LnmError {
    /// Invalid configuration value or inconsistent parameter combination.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input failed a precondition (shape mismatch, non-finite values, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A stored corpus or artifact could not be read back.
    #[error("ingestion error: {0}")]
    Ingestion(String),

    /// Feature computation received a mask it cannot measure.
    #[error("feature error: {0}")]
    Feature(String),

    /// Training diverged or produced non-finite values.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LnmError>;

impl LnmError {
    /// Exit code for the CLI: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            LnmError::Config(_) | LnmError::Validation(_) => 2,
            LnmError::Ingestion(_) | LnmError::Feature(_) | LnmError::Io(_) | LnmError::Serde(_) => 3,
            LnmError::Numerical(_) => 4,
        }
    }
}
