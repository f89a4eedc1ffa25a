//! File formats, configuration and command implementations around
//! [`sat_core`].

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod jsonl;

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint is corrupt: {0}")]
    Corrupt(String),
    #[error("invalid override `{0}`: {1}")]
    Override(String, String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] sat_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    /// Process exit code: 2 for invalid invocations, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Override(..) | Error::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
