use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::data::IdxError;
use crate::patterns::PnmError;

/// Errors raised anywhere in the core library.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid hyperparameters, architecture or shape declarations.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller violated an operation's precondition.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    /// NaN/Inf appeared where finite values are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("generation error: {0}")]
    Generation(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Idx(#[from] IdxError),

    #[error(transparent)]
    Pnm(#[from] PnmError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}
