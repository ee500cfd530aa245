use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimMismatch { expected: Vec<usize>, found: Vec<usize> },

    #[error("image too small: {height}x{width}, need at least {min}x{min}")]
    TooSmall { height: usize, width: usize, min: usize },

    #[error("degradation pool is empty")]
    EmptyPool,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("shape mismatch for parameter `{name}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },

    #[error("embedding backend `{backend}` failed: {message}")]
    Backend { backend: String, message: String },

    #[error("contrastive loss needs at least one negative")]
    NoNegatives,

    #[error("non-finite {term} loss{}", match .index { Some(i) => alloc::format!(" at batch image {i}"), None => String::new() })]
    NonFiniteLoss { term: String, index: Option<usize> },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { expected: u32, found: u32 },

    #[error("checkpoint is truncated: {0}")]
    CheckpointTruncated(String),

    #[error("malformed checkpoint: {0}")]
    CheckpointMalformed(String),

    #[error("config line {line}: {message}")]
    ConfigParse { line: usize, message: String },
}

impl Error {
    pub(crate) fn dims(expected: &[usize], found: &[usize]) -> Self {
        Error::DimMismatch { expected: expected.to_vec(), found: found.to_vec() }
    }
}
