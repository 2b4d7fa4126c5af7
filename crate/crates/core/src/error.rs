use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: `{field}` {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("failed to parse config: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Wraps a child error with the drop/realization it occurred in.
    #[error("drop {drop}, realization {realization}: {source}")]
    InDrop {
        drop: u64,
        realization: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors raised by validation rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::InvalidConfig { .. } | Error::Parse(_) => true,
            Error::InDrop { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    /// True for errors raised by the numerics.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Numerical(_) => true,
            Error::InDrop { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn in_drop(self, drop: u64, realization: u64) -> Self {
        Error::InDrop {
            drop,
            realization,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
