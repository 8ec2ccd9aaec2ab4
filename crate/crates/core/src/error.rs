use std::path::PathBuf;

use crate::tensor::Shape4;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error in {op}: expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: Shape4,
    },

    #[error("degenerate batch in {op}: need at least 2 values per channel, got {count}")]
    DegenerateBatch { op: &'static str, count: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("label {label} of sample {sample} is out of range for {classes} classes")]
    Label {
        sample: usize,
        label: usize,
        classes: usize,
    },

    #[error("non-finite value encountered: {0}")]
    Numeric(String),

    #[error("decode error: {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("checkpoint: bad magic bytes")]
    BadMagic,

    #[error("checkpoint: unsupported version {found} (expected {expected})")]
    VersionMismatch { found: u8, expected: u8 },

    #[error("checkpoint: truncated {section} (needed {needed} bytes, {available} available)")]
    Truncated {
        section: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("checkpoint: manifest describes {manifest} values but blob holds {blob}")]
    ManifestMismatch { manifest: usize, blob: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl Into<String>, actual: Shape4) -> Self {
        Error::Shape {
            op,
            expected: expected.into(),
            actual,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by unreadable files or undecodable content, as
    /// opposed to bad configuration or inconsistent data.
    pub fn is_io_or_decode(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Decode { .. }
                | Error::BadMagic
                | Error::VersionMismatch { .. }
                | Error::Truncated { .. }
                | Error::ManifestMismatch { .. }
        )
    }
}
