//! Weakly supervised object detection from image-level labels.
//!
//! Each category gets a linear detector `(w, b)` over precomputed region features,
//! learned by minimizing a tanh-smoothed, objectness-weighted max-over-regions loss
//! ("MI-max"). The crate also carries the two comparison learners (top-objectness SVM
//! and MI-SVM), detection with non-maximum suppression, PASCAL-style evaluation, an
//! on-disk feature archive format, and a synthetic generator with planted concepts.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod archive;
pub mod baselines;
pub mod cli;
pub mod error;
pub mod eval;
pub mod model;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{
    validate_bag, BoundingBox, Detection, FeatureBag, Label, LinearScorer, Method, Region,
    ScoreFn, TrainConfig,
};
