use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("unknown config key `{key}`; valid keys are: {valid}")]
    UnknownConfigKey { key: String, valid: String },

    #[error("shape mismatch for `{name}`: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("invalid tensor `{name}`: {reason}")]
    InvalidTensor { name: String, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("data error at {path}: {reason}")]
    Data { path: PathBuf, reason: String },

    #[error("non-finite loss at iteration {iter}: {detail}")]
    NonFiniteLoss { iter: usize, detail: String },

    #[error("mask cannot be applied in eval mode")]
    MaskInEval,

    #[error("pool factor {factor} collapses a {h}x{w} feature map to zero size")]
    PoolTooLarge { factor: usize, h: usize, w: usize },

    #[error("iteration {t} outside schedule range [0, {total}]")]
    IterOutOfRange { t: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
