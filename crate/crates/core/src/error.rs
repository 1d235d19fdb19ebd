use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum CadadError {
    /// Invalid or inconsistent configuration (unknown key, bad value, infeasible geometry).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke a shape or ordering contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// NaN/Inf or a diverging quantity.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Channel or layer index outside its valid range.
    #[error("index out of range: {0}")]
    Index(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl CadadError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CadadError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line front-end.
    pub fn exit_code(&self) -> i32 {
        match self {
            CadadError::Config(_) | CadadError::Parse { .. } => 2,
            CadadError::Numeric(_) => 3,
            CadadError::Io { .. } | CadadError::Serde(_) => 4,
            CadadError::Contract(_) | CadadError::Index(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CadadError>;
