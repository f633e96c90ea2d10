use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("PLY parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("unsupported depth {depth}: {msg}")]
    UnsupportedDepth { depth: u32, msg: &'static str },

    #[error("corrupt stream: {0}")]
    CorruptStream(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid state: {0}")]
    State(&'static str),

    #[error("incompatible weights: {0}")]
    IncompatibleWeights(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("no model available for block size {0}")]
    MissingModel(usize),

    #[error("density is undefined for an empty point cloud")]
    UndefinedDensity,

    #[error("not a coded point cloud stream (bad magic)")]
    BadMagic,

    #[error("unsupported stream version {found} (newest supported is {supported})")]
    UnsupportedVersion { found: u16, supported: u16 },
}

impl Error {
    pub(crate) fn corrupt(msg: impl Into<String>) -> Self {
        Error::CorruptStream(msg.into())
    }
}
