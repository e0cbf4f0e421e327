use std::io;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dimension mismatch: {op} expected {expected}, got {actual}")]
    Dimension {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("I/O error at byte {offset}: {source}")]
    Io {
        offset: u64,
        #[source]
        source: io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt data at byte {offset}: {reason}")]
    Corruption { offset: u64, reason: String },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("non-finite value in snapshot {snapshot} ({label})")]
    NonFinite { snapshot: usize, label: String },

    /// The trace does not contain the snapshot sequence a computation needs.
    #[error("structural error: {0}")]
    Structural(String),

    #[error("requested {requested} blocks but only {eligible} are eligible for pruning")]
    Capacity { requested: usize, eligible: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Training { step: usize, loss: f64 },

    #[error("invalid input: {0}")]
    Input(String),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// True for failures of the underlying byte source or sink, or of a file's
    /// encoding, as opposed to failures of the data's meaning.
    pub fn is_io_like(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Format(_)
                | Error::Corruption { .. }
                | Error::UnsupportedVersion(_)
                | Error::NonFinite { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
