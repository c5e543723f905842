use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library and CLI can report.
#[derive(Debug, Error)]
pub enum PolkError {
    /// Caller passed arguments that don't fit together (dimension or kernel mismatch, bad label).
    #[error("usage error: {0}")]
    Usage(String),

    /// A training configuration that violates a hard constraint.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error in {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// The model order would exceed the configured cap.
    #[error("capacity error{}: model order {order} exceeds cap {cap}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    Capacity {
        step: Option<usize>,
        order: usize,
        cap: usize,
    },

    /// A theory check failed on a live run.
    #[error("diagnostic failure: {0}")]
    Diagnostic(String),
}

impl PolkError {
    /// Process exit code for this error (0 is reserved for success).
    pub fn exit_code(&self) -> i32 {
        match self {
            PolkError::Usage(_) | PolkError::Config(_) => 1,
            PolkError::Io { .. } | PolkError::Parse { .. } => 2,
            PolkError::Capacity { .. } => 3,
            PolkError::Diagnostic(_) => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PolkError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        PolkError::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = PolkError> = std::result::Result<T, E>;
