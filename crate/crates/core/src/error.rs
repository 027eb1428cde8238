use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure surfaced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidShape { op: &'static str, msg: String },
    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("backward called on a tensor that does not depend on any gradient-tracked leaf")]
    Detached,
    #[error("backward already ran on this graph; reset gradients first")]
    BackwardTwice,
    #[error("weight norm: output channel {channel} has zero-norm direction vector")]
    ZeroNormFilter { channel: usize },
    #[error("batch norm: {0}")]
    BatchNorm(String),
    #[error("invalid block spec: {0}")]
    InvalidBlock(String),
    #[error("invalid network spec: {0}")]
    InvalidNet(String),
    #[error("no low-rank width satisfies the parameter budget: {0}")]
    BudgetInfeasible(String),
    #[error("non-finite gradient in parameter `{name}` ({count} entries)")]
    NonFiniteGradient { name: String, count: usize },
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("no images found in {0}")]
    NoImages(PathBuf),
    #[error("manifest {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse classification used for process exit codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_)
            | Error::InvalidBlock(_)
            | Error::InvalidNet(_)
            | Error::BudgetInfeasible(_) => ErrorCategory::Config,
            Error::NoImages(_)
            | Error::Manifest { .. }
            | Error::Data(_)
            | Error::Image { .. }
            | Error::Io { .. }
            | Error::CheckpointVersion { .. }
            | Error::CorruptCheckpoint(_)
            | Error::UnknownParam(_)
            | Error::DuplicateParam(_) => ErrorCategory::Data,
            Error::NonFinite { .. }
            | Error::NonFiniteGradient { .. }
            | Error::ZeroNormFilter { .. } => ErrorCategory::Numerical,
            _ => ErrorCategory::Internal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numerical,
    Internal,
}
