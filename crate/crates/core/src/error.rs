//! Crate-wide error type.

use std::path::PathBuf;

/// Errors surfaced by the library.
///
/// Checkpoint decoding distinguishes bad magic, unsupported version,
/// truncation and shape mismatches so callers can tell a corrupt file from
/// one written under a different configuration.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller violated a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Tensor shapes are inconsistent for the named quantity.
    #[error("shape mismatch for {name}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    /// A configuration key or value is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// An input corpus is unusable (empty, malformed, too short).
    #[error("corpus error: {0}")]
    Corpus(String),

    /// A token is outside the model vocabulary.
    #[error("out-of-vocabulary token: {0}")]
    OutOfVocab(String),

    /// Checkpoint file does not start with the expected magic bytes.
    #[error("bad checkpoint magic in {0}")]
    BadMagic(PathBuf),

    /// Checkpoint version is not supported by this build.
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),

    /// Checkpoint file ended before a complete record was read.
    #[error("truncated checkpoint: {0}")]
    Truncated(String),

    /// Decoding was asked to run past the configured length cap.
    #[error("decode length cap of {0} reached")]
    DecodeCap(usize),

    /// An I/O failure, with the path that caused it.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// JSON (de)serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Convenience constructor for I/O errors carrying path context.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
