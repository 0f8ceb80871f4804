use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("image `{0}` has no regions")]
    EmptyBag(String),

    #[error("degenerate box ({x1}, {y1}, {x2}, {y2})")]
    InvalidBox { x1: f32, y1: f32, x2: f32, y2: f32 },

    #[error("objectness {0} outside [0, 1]")]
    InvalidObjectness(f32),

    #[error("label must be +1 or -1, got {0}")]
    InvalidLabel(i8),

    #[error("score {0} is not finite")]
    InvalidScore(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("class counts ({n_pos} pos / {n_neg} neg) disagree with the labels ({found_pos} pos / {found_neg} neg)")]
    CountMismatch {
        n_pos: usize,
        n_neg: usize,
        found_pos: usize,
        found_neg: usize,
    },

    #[error("bag `{image_id}` has no label for class `{class}`")]
    MissingLabel { image_id: String, class: String },

    #[error("unknown class `{class}`; available: {}", .available.join(", "))]
    UnknownClass { class: String, available: Vec<String> },

    #[error("class `{0}` has no positive bags")]
    NoPositives(String),

    #[error("class `{0}` has no negative bags")]
    NoNegatives(String),

    #[error("gradient requested on an empty batch")]
    EmptyBatch,

    #[error("train/validation split lacks a polarity for class `{class}` ({split} split)")]
    SplitTooSmall { class: String, split: &'static str },

    #[error("bad magic bytes in {}", .0.display())]
    BadMagic(PathBuf),

    #[error("unsupported archive version {0}")]
    VersionUnsupported(u32),

    #[error("corrupt or truncated record for image `{image_id}`: {reason}")]
    CorruptOffset { image_id: String, reason: String },

    #[error("inconsistent feature dimensions: {0}")]
    InconsistentDims(String),

    #[error("parse error in {source_name} at record {line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
