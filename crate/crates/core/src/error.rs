use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    /// Malformed container: bad magic, version or truncated payload.
    #[error("format error: {0}")]
    Format(String),

    #[error("shape error: {0}")]
    Shape(String),

    /// Structures that are individually valid but disagree with each other.
    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("invalid dictionary: {0}")]
    InvalidDictionary(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    #[error("sampling error: class {class} has {available} images, {required} required")]
    Sampling {
        class: usize,
        available: usize,
        required: usize,
    },

    #[error("training error: class {class} has no training examples")]
    Training { class: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
