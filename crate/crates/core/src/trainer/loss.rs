//! The MI-max data terms, their regularized form and subgradient, evaluated directly
//! on [`FeatureBag`]s in double precision.
//!
//! These are the reference definitions. The SGD loop in `sgd` evaluates the same
//! quantities through dense matrix products; both are tested against each other.

use crate::error::{Error, Result};
use crate::model::{dot_f32, FeatureBag, Label, LinearScorer, Region};

/// Number of positive and negative bags for one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassCounts {
    n_pos: usize,
    n_neg: usize,
}

impl ClassCounts {
    pub fn new(n_pos: usize, n_neg: usize, class: &str) -> Result<Self> {
        if n_pos == 0 {
            return Err(Error::NoPositives(class.to_owned()));
        }
        if n_neg == 0 {
            return Err(Error::NoNegatives(class.to_owned()));
        }
        Ok(Self { n_pos, n_neg })
    }

    /// Counts the labels of `class` over `bags`.
    pub fn from_bags(bags: &[FeatureBag], class: &str) -> Result<Self> {
        let (p, n) = tally(bags, class)?;
        Self::new(p, n, class)
    }

    pub fn n_pos(&self) -> usize {
        self.n_pos
    }

    pub fn n_neg(&self) -> usize {
        self.n_neg
    }

    /// `-y / n_y`: the signed weight of one bag's term in the data loss.
    pub fn coefficient(&self, label: Label) -> f64 {
        match label {
            Label::Positive => -1.0 / self.n_pos as f64,
            Label::Negative => 1.0 / self.n_neg as f64,
        }
    }
}

fn tally(bags: &[FeatureBag], class: &str) -> Result<(usize, usize)> {
    let mut p = 0;
    let mut n = 0;
    for bag in bags {
        match label_of(bag, class)? {
            Label::Positive => p += 1,
            Label::Negative => n += 1,
        }
    }
    Ok((p, n))
}

pub(crate) fn label_of(bag: &FeatureBag, class: &str) -> Result<Label> {
    bag.label(class).ok_or_else(|| Error::MissingLabel {
        image_id: bag.image_id().to_owned(),
        class: class.to_owned(),
    })
}

fn check_counts(bags: &[FeatureBag], class: &str, counts: ClassCounts) -> Result<()> {
    let (p, n) = tally(bags, class)?;
    if p != counts.n_pos || n != counts.n_neg {
        return Err(Error::CountMismatch {
            n_pos: counts.n_pos,
            n_neg: counts.n_neg,
            found_pos: p,
            found_neg: n,
        });
    }
    Ok(())
}

fn check_dims(w: &[f64], bags: &[FeatureBag]) -> Result<()> {
    for bag in bags {
        if bag.feature_dim() != w.len() {
            return Err(Error::DimensionMismatch {
                expected: w.len(),
                found: bag.feature_dim(),
            });
        }
    }
    Ok(())
}

/// Region index and value attaining `max_k weight_k * (w.x_k + b)`.
///
/// `weight_k` is `objectness + epsilon` when `epsilon` is given and 1 otherwise.
/// Ties go to the lowest region index.
pub(crate) fn bag_argmax(w: &[f64], b: f64, bag: &FeatureBag, epsilon: Option<f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, region) in bag.regions().iter().enumerate() {
        let affine = dot_f32(w, region.feature()) + b;
        let v = match epsilon {
            Some(eps) => (f64::from(region.objectness()) + eps) * affine,
            None => affine,
        };
        if v > best.1 {
            best = (k, v);
        }
    }
    best
}

fn data_term(
    w: &[f64],
    b: f64,
    bags: &[FeatureBag],
    class: &str,
    counts: ClassCounts,
    epsilon: Option<f64>,
) -> Result<f64> {
    check_dims(w, bags)?;
    check_counts(bags, class, counts)?;
    let mut total = 0.0;
    for bag in bags {
        let (_, u) = bag_argmax(w, b, bag, epsilon);
        total += counts.coefficient(label_of(bag, class)?) * u.tanh();
    }
    Ok(total)
}

/// Unweighted data term: `sum_i (-y_i / n_{y_i}) tanh(max_k (w.x_{i,k} + b))`.
pub fn loss_phi(
    w: &[f64],
    b: f64,
    bags: &[FeatureBag],
    class: &str,
    counts: ClassCounts,
) -> Result<f64> {
    data_term(w, b, bags, class, counts, None)
}

/// Objectness-weighted data term: the max runs over `(s_{i,k} + epsilon)(w.x_{i,k} + b)`.
pub fn loss_phi_s(
    w: &[f64],
    b: f64,
    bags: &[FeatureBag],
    class: &str,
    counts: ClassCounts,
    epsilon: f64,
) -> Result<f64> {
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidConfig(format!("epsilon must be >= 0, got {epsilon}")));
    }
    data_term(w, b, bags, class, counts, Some(epsilon))
}

/// Data term plus `C * ||w||^2`. The constant multiplies the regularizer only.
#[allow(clippy::too_many_arguments)]
pub fn regularized_loss(
    w: &[f64],
    b: f64,
    bags: &[FeatureBag],
    class: &str,
    counts: ClassCounts,
    epsilon: f64,
    c: f64,
    score_weighted: bool,
) -> Result<f64> {
    if !(c >= 0.0) {
        return Err(Error::InvalidConfig(format!("C must be >= 0, got {c}")));
    }
    let data = if score_weighted {
        loss_phi_s(w, b, bags, class, counts, epsilon)?
    } else {
        loss_phi(w, b, bags, class, counts)?
    };
    Ok(data + c * squared_norm(w))
}

pub(crate) fn squared_norm(w: &[f64]) -> f64 {
    w.iter().map(|v| v * v).sum()
}

/// Subgradient of [`regularized_loss`] with respect to `(w, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub w: Vec<f64>,
    pub b: f64,
}

/// Subgradient of the regularized loss restricted to `batch`.
///
/// `counts` are taken as given (normally the full training set's), so they need not
/// agree with the labels inside the batch.
#[allow(clippy::too_many_arguments)]
pub fn loss_gradient(
    w: &[f64],
    b: f64,
    batch: &[FeatureBag],
    class: &str,
    counts: ClassCounts,
    epsilon: f64,
    c: f64,
    score_weighted: bool,
) -> Result<Gradient> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    check_dims(w, batch)?;
    let eps = score_weighted.then_some(epsilon);
    let mut gw: Vec<f64> = w.iter().map(|v| 2.0 * c * v).collect();
    let mut gb = 0.0;
    for bag in batch {
        let (k, u) = bag_argmax(w, b, bag, eps);
        let region = &bag.regions()[k];
        let t = u.tanh();
        let mut g = counts.coefficient(label_of(bag, class)?) * (1.0 - t * t);
        if let Some(eps) = eps {
            g *= f64::from(region.objectness()) + eps;
        }
        for (acc, &x) in gw.iter_mut().zip(region.feature()) {
            *acc += g * f64::from(x);
        }
        gb += g;
    }
    Ok(Gradient { w: gw, b: gb })
}

/// Detection confidence of one region: `tanh((s + epsilon)(w.x + b))`.
pub fn score_region(scorer: &LinearScorer, region: &Region) -> Result<f64> {
    let affine = scorer.decision(region.feature())?;
    Ok(((f64::from(region.objectness()) + scorer.epsilon()) * affine).tanh())
}
