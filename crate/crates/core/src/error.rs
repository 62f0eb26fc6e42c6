use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported tensor order {0}; only 2-way and 3-way tensors are supported")]
    UnsupportedOrder(usize),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("data length {len} does not match product of dims {dims:?}")]
    DataLength { dims: Vec<usize>, len: usize },

    #[error("index out of range: {what} = {index}, limit {limit}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no observation for subject {subject}, visit {visit}")]
    Unobserved { subject: usize, visit: usize },

    #[error("too few posterior draws: need at least {needed}, have {have}")]
    TooFewDraws { needed: usize, have: usize },

    #[error("undefined quantity: {0}")]
    Undefined(String),

    #[error("sampler failed at iteration {iteration}: {source}")]
    Sampler {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Short stable tag for each variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnsupportedOrder(_) => "unsupported-order",
            Error::ShapeMismatch { .. } => "shape-mismatch",
            Error::DataLength { .. } => "data-length",
            Error::IndexOutOfRange { .. } => "index-out-of-range",
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::Unobserved { .. } => "unobserved",
            Error::TooFewDraws { .. } => "too-few-draws",
            Error::Undefined(_) => "undefined",
            Error::Sampler { .. } => "sampler",
            Error::Numerical(_) => "numerical",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
