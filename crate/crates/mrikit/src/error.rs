//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward on a detached graph: the loss does not depend on any tensor with requires_grad")]
    DetachedGraph,

    #[error("unknown layer {name:?}; available: {available:?}")]
    UnknownLayer { name: String, available: Vec<String> },

    #[error("tap {0:?} has no recorded gradient; run backward first")]
    TapNotPopulated(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty volume")]
    EmptyVolume,

    #[error("label must be 0 or 1, got {0}")]
    BadLabel(f32),

    #[error("attribution target {target} is not available for {architecture}")]
    TargetMismatch { target: String, architecture: String },

    #[error("mask is empty")]
    EmptyMask,

    #[error("single-class input: AUC is undefined")]
    SingleClass,

    #[error("input extent {extent} not divisible by {required} (encoder depth)")]
    Indivisible { extent: usize, required: usize },

    #[error("not an NPY file: bad magic bytes")]
    NpyBadMagic,

    #[error("unsupported NPY version {0}.{1}")]
    NpyVersion(u8, u8),

    #[error("malformed NPY header: {0}")]
    NpyBadHeader(String),

    #[error("unsupported NPY dtype {0:?}; supported: <f4, <f8, |u1")]
    NpyUnsupportedDtype(String),

    #[error("truncated NPY payload: expected {expected} bytes, got {got}")]
    NpyTruncated { expected: usize, got: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint digest mismatch: checkpoint {found} vs config {expected}")]
    DigestMismatch { found: String, expected: String },

    #[error("malformed checkpoint: {0}")]
    BadCheckpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }
}
