use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid segment [{start}, {end}]")]
    InvalidSegment { start: f64, end: f64 },

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("ground-truth list is empty")]
    EmptyGroundTruth,

    #[error("length mismatch for {what}: {left} vs {right}")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("sample sets were drawn on different time grids")]
    GridMismatch,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("activation cache was produced by a different parameter state")]
    StaleCache,

    #[error("refinement already completed {0} iterations")]
    IterationOverflow(usize),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("video {video}: {reason}")]
    Validation { video: String, reason: String },

    #[error("video {video}: could not place {segments} segments without overlap after {attempts} attempts")]
    InfeasiblePacking {
        video: String,
        segments: usize,
        attempts: usize,
    },

    #[error("malformed {kind} file: {reason}")]
    Format { kind: &'static str, reason: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(kind: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            kind,
            reason: reason.into(),
        }
    }

    pub(crate) fn validation(video: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            video: video.into(),
            reason: reason.into(),
        }
    }
}
