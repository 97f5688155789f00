use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("bad axis {axis} for tensor of rank {rank}")]
    BadAxis { axis: usize, rank: usize },

    #[error("reduction over an empty extent")]
    EmptyReduce,

    #[error("kernel {kernel} does not fit padded input extent {padded}")]
    KernelTooLarge { kernel: usize, padded: usize },

    #[error("pooling window {window} larger than input extent {extent}")]
    WindowTooLarge { window: usize, extent: usize },

    #[error("batch norm in train mode needs at least 2 elements per channel, got {0}")]
    TooFewElements(usize),

    #[error("backward needs a scalar loss, got {0} elements")]
    NotScalar(usize),

    #[error("unknown variable id {0}")]
    UnknownVar(usize),

    #[error("layer is not deterministic: two identical forwards disagree ({first} vs {second})")]
    NonDeterministicLayer { first: f64, second: f64 },

    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("bad config: {0}")]
    BadConfig(String),

    #[error("not a checkpoint (bad magic)")]
    BadMagic,

    #[error("checkpoint version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint truncated")]
    TruncatedFile,

    #[error("checkpoint checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("checkpoint does not match model: {0}")]
    ConfigMismatch(String),

    #[error("class directory {0} contains no images")]
    EmptyClass(PathBuf),

    #[error("no class directories under {0}")]
    NoClasses(PathBuf),

    #[error("split {0} is empty")]
    EmptySplit(String),

    #[error("cannot decode {path}: {msg}")]
    Decode { path: PathBuf, msg: String },

    #[error("unsupported PNG bit depth {depth} in {path}")]
    UnsupportedBitDepth { path: PathBuf, depth: u8 },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
