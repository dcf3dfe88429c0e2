use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("invalid logits")]
    InvalidLogits,

    #[error("empty clip")]
    EmptyClip,

    #[error("class index {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite gradient in parameter group `{group}`")]
    NonFiniteGradient { group: String },

    #[error("non-finite loss on clip `{clip_id}`")]
    NonFiniteLoss { clip_id: String },

    #[error("bad magic")]
    BadMagic,

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload")]
    TruncatedPayload,

    #[error("dimension overflow")]
    DimensionOverflow,

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
