use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed audio file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("unsupported audio encoding in {path}: {reason}")]
    UnsupportedCodec { path: PathBuf, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// Pearson correlation is undefined when either input has zero variance.
    #[error("correlation undefined: zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("clip {id} too short: {frames} frames < {required} required")]
    ClipTooShort {
        id: String,
        frames: usize,
        required: usize,
    },

    #[error("non-finite loss at step {step} (batch {batch_ids:?}): {detail}")]
    NonFiniteLoss {
        step: u64,
        batch_ids: Vec<String>,
        detail: String,
    },

    #[error("model state error: {0}")]
    State(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("external plug-in failed: {0}")]
    Plugin(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
