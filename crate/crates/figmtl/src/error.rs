//! Crate-wide error type with a coarse classification that maps onto
//! process exit codes (config = 2, data = 3, numeric = 4).

use thiserror::Error;

/// Coarse error class used for CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Invalid configuration or misuse of an API contract.
    Config,
    /// Problems with input data: files, rows, labels, vocabulary.
    Data,
    /// Numeric failures: NaN/Inf domains, training divergence.
    Numeric,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric domain error: {0}")]
    Numeric(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("token id {id} out of range for vocabulary of size {size}")]
    Vocabulary { id: usize, size: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Contract violations are grouped with configuration errors: both mean
    /// the caller asked for something the library cannot do.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::ShapeMismatch { .. } | Error::Contract(_) | Error::Config(_) => {
                ErrorClass::Config
            }
            Error::Data(_)
            | Error::Vocabulary { .. }
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => ErrorClass::Data,
            Error::Numeric(_) | Error::Divergence { .. } => ErrorClass::Numeric,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
