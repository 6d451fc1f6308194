use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the harness. Each maps to a process exit code.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] cusp_core::Error),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("cannot parse config {path}: {source}")]
    ConfigParse {
        path: PathBuf,
        source: serde_json::Error,
    },

    #[error("missing file {path} (referenced by `{field}`)")]
    MissingFile { path: PathBuf, field: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(HarnessError::Config(msg.into()))
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 usage or configuration, 2 data or IO, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        use cusp_core::Error as E;
        match self {
            Self::Config(_) | Self::Usage(_) | Self::ConfigParse { .. } => 1,
            Self::MissingFile { .. } | Self::Io { .. } => 2,
            Self::Core(e) => match e {
                E::Config(_) | E::Usage(_) | E::Generation(_) => 1,
                E::Shape { .. } | E::Checkpoint(_) | E::Idx(_) | E::Pnm(_) | E::Io(_) => 2,
                E::Numeric(_) | E::Diverged { .. } => 3,
            },
        }
    }
}
