use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two operands disagree on shape.
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A configuration field holds an invalid value.
    #[error("invalid configuration: `{field}` {reason}")]
    Config { field: String, reason: String },

    /// An API was called in a state or with arguments it does not accept.
    #[error("usage error: {0}")]
    Usage(String),

    /// Input data failed validation.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("unknown prompt(s) {prompts:?}: not found in the embeddings file and no embedding bridge is configured (set FIVEDOLLAR_BRIDGE_URL or add the prompt to the embeddings file)")]
    UnresolvedPrompt { prompts: Vec<String> },

    #[error("embedding bridge error: {0}")]
    Bridge(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("png decode error: {0}")]
    PngDecode(#[from] png::DecodingError),

    #[error("png encode error: {0}")]
    PngEncode(#[from] png::EncodingError),
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config { .. } | Error::Usage(_) | Error::Validation(_) | Error::UnresolvedPrompt { .. }
        )
    }
}
