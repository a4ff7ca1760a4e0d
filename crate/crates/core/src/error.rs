use std::io;

use thiserror::Error;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {c}x{w}x{h}: every dimension must be at least 1")]
    InvalidShape { c: usize, w: usize, h: usize },

    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: Shape, right: Shape },

    #[error("expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("kernel {kernel} does not fit feature map {map_c}x{map_w}x{map_h}")]
    Geometry {
        kernel: Shape,
        map_c: usize,
        map_w: usize,
        map_h: usize,
    },

    #[error("dependency tree does not span the given {expected} tensors")]
    TreeMismatch { expected: usize },

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {found} (this build reads {supported})")]
    VersionMismatch { found: u16, supported: u16 },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("dtype or shape mismatch: {0}")]
    DtypeMismatch(String),

    #[error("unexpected end of file while reading {0}")]
    Truncated(&'static str),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("corrupt payload: {0}")]
    Corrupt(String),
}
