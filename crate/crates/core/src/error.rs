//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Errors produced by tensor construction, layer application, architecture
/// analysis, bound evaluation and experiment runners.
#[derive(Debug, Error)]
pub enum Error {
    #[error("tensor shape {0:?} has no elements")]
    EmptyShape(Vec<usize>),

    #[error("shape {shape:?} implies {expected} values, got {actual}")]
    ShapeDataMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(
        "convolution output would be empty: input {h}x{w}, kernel {k}, stride {s}, padding {p}"
    )]
    InvalidOutputDims {
        h: usize,
        w: usize,
        k: usize,
        s: usize,
        p: usize,
    },

    #[error("layer {index} ({kind}): {reason}")]
    Layer {
        index: usize,
        kind: &'static str,
        reason: String,
    },

    #[error("stride config has {given} entries but architecture has {stages} stages")]
    StrideConfigLength { given: usize, stages: usize },

    #[error("kernel {kernel} exceeds upsampled length {upsampled}")]
    KernelTooLarge { kernel: usize, upsampled: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("architecture must end in a linear head")]
    MissingHead,

    #[error("all sampled input pairs coincide; Lipschitz ratio is undefined")]
    CoincidentPairs,

    #[error("malformed architecture spec: {0}")]
    MalformedArch(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
