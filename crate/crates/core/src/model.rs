//! Domain types shared by the trainer, the baselines, evaluation and the archive format.
//!
//! Every constructor validates its invariants; once built, values are immutable and may
//! be shared read-only between workers.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in original-image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f32; 4]", into = "[f32; 4]")]
pub struct BoundingBox {
    x1: f32,
    y1: f32,
    x2: f32,
    y2: f32,
}

impl BoundingBox {
    /// Builds a box, rejecting non-finite or degenerate (zero or negative area) coordinates.
    pub fn new(x1: f32, y1: f32, x2: f32, y2: f32) -> Result<Self> {
        let finite = [x1, y1, x2, y2].iter().all(|v| v.is_finite());
        if !finite || x1 >= x2 || y1 >= y2 {
            return Err(Error::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f32 {
        self.x1
    }

    pub fn y1(&self) -> f32 {
        self.y1
    }

    pub fn x2(&self) -> f32 {
        self.x2
    }

    pub fn y2(&self) -> f32 {
        self.y2
    }

    pub fn coords(&self) -> [f32; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> f64 {
        f64::from(self.x2) - f64::from(self.x1)
    }

    pub fn height(&self) -> f64 {
        f64::from(self.y2) - f64::from(self.y1)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

impl TryFrom<[f32; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(c: [f32; 4]) -> Result<Self> {
        Self::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BoundingBox> for [f32; 4] {
    fn from(b: BoundingBox) -> Self {
        b.coords()
    }
}

/// One candidate region of an image: its box, class-agnostic objectness and feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    bbox: BoundingBox,
    objectness: f32,
    feature: Vec<f32>,
}

impl Region {
    pub fn new(bbox: BoundingBox, objectness: f32, feature: Vec<f32>) -> Result<Self> {
        if !(0.0..=1.0).contains(&objectness) {
            return Err(Error::InvalidObjectness(objectness));
        }
        Ok(Self {
            bbox,
            objectness,
            feature,
        })
    }

    pub fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }

    pub fn objectness(&self) -> f32 {
        self.objectness
    }

    pub fn feature(&self) -> &[f32] {
        &self.feature
    }

    pub fn dim(&self) -> usize {
        self.feature.len()
    }
}

/// Image-level label for one class. Negatives are explicit, never implied by absence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    pub fn from_bool(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

impl TryFrom<i8> for Label {
    type Error = Error;

    fn try_from(v: i8) -> Result<Self> {
        match v {
            1 => Ok(Label::Positive),
            -1 => Ok(Label::Negative),
            other => Err(Error::InvalidLabel(other)),
        }
    }
}

impl From<Label> for i8 {
    fn from(l: Label) -> i8 {
        match l {
            Label::Positive => 1,
            Label::Negative => -1,
        }
    }
}

/// One image: its ordered regions and per-class image-level labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBag {
    image_id: String,
    regions: Vec<Region>,
    labels: BTreeMap<String, Label>,
}

impl FeatureBag {
    /// Builds a bag. Region order is kept exactly as given.
    pub fn new(
        image_id: impl Into<String>,
        regions: Vec<Region>,
        labels: BTreeMap<String, Label>,
    ) -> Result<Self> {
        let image_id = image_id.into();
        let Some(first) = regions.first() else {
            return Err(Error::EmptyBag(image_id));
        };
        let dim = first.dim();
        if let Some(r) = regions.iter().find(|r| r.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: r.dim(),
            });
        }
        Ok(Self {
            image_id,
            regions,
            labels,
        })
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn labels(&self) -> &BTreeMap<String, Label> {
        &self.labels
    }

    pub fn label(&self, class: &str) -> Option<Label> {
        self.labels.get(class).copied()
    }

    pub fn feature_dim(&self) -> usize {
        self.regions[0].dim()
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// Returns a copy with one class label replaced or added.
    pub fn with_label(mut self, class: impl Into<String>, label: Label) -> Self {
        self.labels.insert(class.into(), label);
        self
    }
}

/// Checks every bag invariant against the archive-wide feature dimension.
///
/// `FeatureBag::new` already enforces most of these; this re-checks a bag that may
/// come from an untrusted source (a decoded archive, a hand-built fixture).
pub fn validate_bag(bag: &FeatureBag, expected_dim: usize) -> Result<()> {
    if bag.regions.is_empty() {
        return Err(Error::EmptyBag(bag.image_id.clone()));
    }
    for r in &bag.regions {
        if r.dim() != expected_dim {
            return Err(Error::DimensionMismatch {
                expected: expected_dim,
                found: r.dim(),
            });
        }
        let b = r.bbox;
        BoundingBox::new(b.x1, b.y1, b.x2, b.y2)?;
        if !(0.0..=1.0).contains(&r.objectness) {
            return Err(Error::InvalidObjectness(r.objectness));
        }
    }
    Ok(())
}

/// Which learner produced a scorer; decides how its regions are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    MiMax,
    MiMaxC,
    Max,
    MiSvm,
    /// A plain linear SVM on given samples.
    Svm,
}

impl Method {
    pub fn score_fn(self) -> ScoreFn {
        match self {
            Method::MiMax | Method::MiMaxC => ScoreFn::Tanh,
            Method::Max | Method::MiSvm | Method::Svm => ScoreFn::Decision,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::MiMax => "mi-max",
            Method::MiMaxC => "mi-max-c",
            Method::Max => "max",
            Method::MiSvm => "mi-svm",
            Method::Svm => "svm",
        };
        f.write_str(s)
    }
}

/// Region confidence function used at detection time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreFn {
    /// `tanh((objectness + epsilon) * (w.x + b))`
    Tanh,
    /// Raw SVM decision value `w.x + b`.
    Decision,
}

/// A trained linear detector for one category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearScorer {
    class_name: String,
    method: Method,
    w: Vec<f64>,
    b: f64,
    epsilon: f64,
    final_loss: f64,
    seed_used: u64,
    #[serde(default)]
    l2_normalize: bool,
}

impl LinearScorer {
    pub fn new(
        class_name: impl Into<String>,
        method: Method,
        w: Vec<f64>,
        b: f64,
        epsilon: f64,
        final_loss: f64,
        seed_used: u64,
    ) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(Error::InvalidConfig(format!("epsilon must be >= 0, got {epsilon}")));
        }
        if w.is_empty() {
            return Err(Error::InvalidConfig("scorer weight vector is empty".into()));
        }
        Ok(Self {
            class_name: class_name.into(),
            method,
            w,
            b,
            epsilon,
            final_loss,
            seed_used,
            l2_normalize: false,
        })
    }

    /// Marks the scorer as expecting unit-norm features; scoring normalizes each region first.
    pub fn with_l2_normalize(mut self, on: bool) -> Self {
        self.l2_normalize = on;
        self
    }

    pub fn class_name(&self) -> &str {
        &self.class_name
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn final_loss(&self) -> f64 {
        self.final_loss
    }

    pub fn seed_used(&self) -> u64 {
        self.seed_used
    }

    pub fn l2_normalize(&self) -> bool {
        self.l2_normalize
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn score_fn(&self) -> ScoreFn {
        self.method.score_fn()
    }

    /// `w.x + b` for one feature vector, honoring the normalization flag.
    pub fn decision(&self, feature: &[f32]) -> Result<f64> {
        if feature.len() != self.w.len() {
            return Err(Error::DimensionMismatch {
                expected: self.w.len(),
                found: feature.len(),
            });
        }
        let dot = dot_f32(&self.w, feature);
        let dot = if self.l2_normalize {
            let norm = l2_norm(feature);
            if norm > 0.0 {
                dot / norm
            } else {
                dot
            }
        } else {
            dot
        };
        Ok(dot + self.b)
    }
}

pub(crate) fn dot_f32(w: &[f64], x: &[f32]) -> f64 {
    w.iter().zip(x).map(|(a, &b)| a * f64::from(b)).sum()
}

pub(crate) fn l2_norm(x: &[f32]) -> f64 {
    x.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
}

/// Training hyper-parameters for the MI-max learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub restarts: usize,
    pub c: f64,
    pub c_grid: Option<Vec<f64>>,
    pub val_fraction: f64,
    pub seed: u64,
    pub score_weighted: bool,
    pub l2_normalize: bool,
}

/// Regularization grid used by MI-max-C when none is given.
pub const DEFAULT_C_GRID: [f64; 6] = [0.0, 0.01, 0.1, 0.5, 1.0, 1.5];

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            learning_rate: 0.01,
            epsilon: 0.01,
            batch_size: 1000,
            restarts: 12,
            c: 0.0,
            c_grid: None,
            val_fraction: 0.2,
            seed: 0,
            score_weighted: true,
            l2_normalize: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return bad(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if self.restarts == 0 {
            return bad("restarts must be >= 1".into());
        }
        if !(self.c >= 0.0) || !self.c.is_finite() {
            return bad(format!("C must be >= 0, got {}", self.c));
        }
        if let Some(grid) = &self.c_grid {
            if grid.is_empty() {
                return bad("C grid is empty".into());
            }
            if grid.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
                return bad("C grid values must be >= 0".into());
            }
            if grid.windows(2).any(|p| p[0] > p[1]) {
                return bad("C grid must be sorted ascending".into());
            }
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("validation fraction must be in (0,1), got {}", self.val_fraction));
        }
        Ok(())
    }
}

/// A scored, class-tagged box produced at test time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    image_id: String,
    class_name: String,
    #[serde(rename = "box")]
    bbox: BoundingBox,
    score: f64,
}

impl Detection {
    /// Scores must be finite. MI-max scores lie in [-1, 1]; baseline decision values are unbounded.
    pub fn new(
        image_id: impl Into<String>,
        class_name: impl Into<String>,
        bbox: BoundingBox,
        score: f64,
    ) -> Result<Self> {
        if !score.is_finite() {
            return Err(Error::InvalidScore(score));
        }
        Ok(Self {
            image_id: image_id.into(),
            class_name: class_name.into(),
            bbox,
            score,
        })
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn class_name(&self) -> &str {
        &self.class_name
    }

    pub fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }

    pub fn score(&self) -> f64 {
        self.score
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx() -> BoundingBox {
        BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap()
    }

    fn bag_of(dims: &[usize]) -> FeatureBag {
        let regions = dims
            .iter()
            .map(|&d| Region::new(bx(), 0.5, vec![0.0; d]).unwrap())
            .collect();
        FeatureBag::new("img", regions, BTreeMap::new()).unwrap()
    }

    #[test]
    fn well_formed_bag_validates() {
        let bag = bag_of(&[2048, 2048, 2048]);
        assert!(validate_bag(&bag, 2048).is_ok());
    }

    #[test]
    fn off_by_one_dimension_is_rejected() {
        let bag = bag_of(&[2047]);
        assert!(matches!(
            validate_bag(&bag, 2048),
            Err(Error::DimensionMismatch { expected: 2048, found: 2047 })
        ));
    }

    #[test]
    fn mixed_dimensions_inside_a_bag_are_rejected() {
        let regions = vec![
            Region::new(bx(), 0.5, vec![0.0; 3]).unwrap(),
            Region::new(bx(), 0.5, vec![0.0; 4]).unwrap(),
        ];
        assert!(FeatureBag::new("x", regions, BTreeMap::new()).is_err());
    }

    #[test]
    fn zero_width_box_is_invalid() {
        assert!(matches!(
            BoundingBox::new(10.0, 10.0, 10.0, 20.0),
            Err(Error::InvalidBox { .. })
        ));
        assert!(BoundingBox::new(0.0, 0.0, f32::NAN, 1.0).is_err());
    }

    #[test]
    fn empty_bag_is_rejected() {
        assert!(matches!(
            FeatureBag::new("e", vec![], BTreeMap::new()),
            Err(Error::EmptyBag(_))
        ));
    }

    #[test]
    fn objectness_outside_unit_interval_is_rejected() {
        assert!(matches!(
            Region::new(bx(), 1.5, vec![1.0]),
            Err(Error::InvalidObjectness(_))
        ));
        assert!(Region::new(bx(), -0.01, vec![1.0]).is_err());
        assert!(Region::new(bx(), f32::NAN, vec![1.0]).is_err());
    }

    #[test]
    fn region_order_is_preserved() {
        let regions: Vec<_> = (0..5)
            .map(|i| Region::new(bx(), 0.1 * i as f32, vec![i as f32]).unwrap())
            .collect();
        let bag = FeatureBag::new("o", regions.clone(), BTreeMap::new()).unwrap();
        assert_eq!(bag.regions(), &regions[..]);
    }

    #[test]
    fn label_conversions() {
        assert_eq!(Label::try_from(1i8).unwrap(), Label::Positive);
        assert_eq!(i8::from(Label::Negative), -1);
        assert!(Label::try_from(0i8).is_err());
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.iterations, 300);
        assert_eq!(cfg.learning_rate, 0.01);
        assert_eq!(cfg.epsilon, 0.01);
        assert_eq!(cfg.batch_size, 1000);
        assert_eq!(cfg.restarts, 12);
        assert!(cfg.validate().is_ok());

        let bad = TrainConfig { restarts: 0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let unsorted = TrainConfig {
            c_grid: Some(vec![1.0, 0.5]),
            ..TrainConfig::default()
        };
        assert!(unsorted.validate().is_err());
        let empty = TrainConfig { c_grid: Some(vec![]), ..TrainConfig::default() };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn scorer_rejects_negative_epsilon() {
        assert!(LinearScorer::new("c", Method::MiMax, vec![1.0], 0.0, -0.1, 0.0, 0).is_err());
    }

    #[test]
    fn box_serializes_as_coordinate_array() {
        let b = BoundingBox::new(1.0, 2.0, 3.0, 4.0).unwrap();
        assert_eq!(serde_json::to_string(&b).unwrap(), "[1.0,2.0,3.0,4.0]");
        assert!(serde_json::from_str::<BoundingBox>("[3.0,2.0,1.0,4.0]").is_err());
    }
}
