//! Crate-wide error type.

use thiserror::Error;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape mismatch between tensor operands. Always names both shapes.
    #[error("dimension mismatch in {op}: {lhs} vs {rhs}")]
    Dimension { op: String, lhs: String, rhs: String },

    /// API contract violation (non-scalar loss, out-of-range target, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A WAV file that is readable but not in the required encoding.
    #[error("unsupported wav format ({field}): {detail}")]
    Format { field: &'static str, detail: String },

    /// A file that cannot be decoded at all (truncated, bad magic, ...).
    #[error("parse error: {0}")]
    Parse(String),

    /// Bad or inconsistent configuration / dataset layout.
    #[error("configuration error: {0}")]
    Config(String),

    /// Checkpoint bytes fail the checksum or magic check.
    #[error("checkpoint integrity: {0}")]
    Integrity(String),

    /// Checkpoint tensor names do not match the selected architecture.
    #[error("checkpoint schema: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn dimension(op: &str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op: op.to_string(),
            lhs: format!("{lhs:?}"),
            rhs: format!("{rhs:?}"),
        }
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
