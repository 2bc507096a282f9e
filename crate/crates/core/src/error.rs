use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: index {index} out of range for bound {bound}")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("non-finite value {value} at flat position {position}")]
    NonFinite { position: usize, value: f64 },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("not a checkpoint file: expected magic {expected:?}, found {found:?}")]
    Format { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported checkpoint version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },

    #[error("truncated checkpoint: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("corrupt data: {0}")]
    Corrupt(String),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable, machine-parsable category name.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Index { .. } => "index",
            Error::NonFinite { .. } => "non_finite",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::Diverged { .. } => "diverged",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Version { .. } => "version",
            Error::Truncated { .. } => "truncated",
            Error::Corrupt(_) => "corrupt",
        }
    }
}
