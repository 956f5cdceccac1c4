use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    DimensionMismatch {
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },

    #[error("data length {got} does not match {width}x{height}x{channels}")]
    DataLength {
        width: usize,
        height: usize,
        channels: usize,
        got: usize,
    },

    #[error("unsupported channel count {0} (expected 1 or 3)")]
    Channels(usize),

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("non-positive depth {value} at index {index}")]
    NonPositiveDepth { index: usize, value: f64 },

    #[error("negative uncertainty {value} at index {index}")]
    NegativeUncertainty { index: usize, value: f64 },

    #[error("point behind camera (z = {0})")]
    BehindCamera(f64),

    #[error("invalid depth {0} (must be > 0)")]
    InvalidDepth(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no valid pixels")]
    NoValidPixels,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("camera left the tube at frame {0}")]
    OutsideTube(usize),

    #[error(transparent)]
    Pfm(#[from] PfmError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Parse failures for the portable float map format.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum PfmError {
    #[error("malformed header: {0}")]
    Header(String),
    #[error("dimension overflow: {0}x{1}")]
    DimensionOverflow(usize, usize),
    #[error("unexpected end of data")]
    UnexpectedEof,
    #[error("non-finite payload value at index {0}")]
    NonFinite(usize),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
