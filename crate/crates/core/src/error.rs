use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the grounding pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape, range, emptiness).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A file did not follow the expected container layout.
    #[error("format error: {0}")]
    Format(String),

    /// An attention row that is not a probability distribution.
    #[error("attention layer {layer}, head {head}, row {row} sums to {sum:.6} (expected 1)")]
    RowSum {
        layer: usize,
        head: usize,
        row: usize,
        sum: f64,
    },

    /// The reasoning response did not follow the strict two-header format.
    #[error("malformed reasoning response: {reason}")]
    CotParse { reason: String, raw: String },

    /// The backend cannot answer the requested kind of query.
    #[error("backend capability missing: {0}")]
    Capability(String),

    /// A backend call failed for one keyframe.
    #[error("backend failed on frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error("non-finite loss on sample {sample}")]
    NonFiniteLoss { sample: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
