//! Fused stochastic gradient descent over several parameter vectors ("heads").
//!
//! All heads of one call share the minibatch schedule, so each sampled bag is decoded
//! once and scored against every head with a single matrix product. Heads differ by
//! class labels, regularization constant and initialization seed; any subset of heads
//! run alone follows exactly the same trajectory since nothing couples them.

use ndarray::{Array1, Array2};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::source::{BagSource, BagView};
use crate::error::Result;
use crate::model::{Label, TrainConfig};

/// Stream id separating the minibatch schedule from initialization draws.
const BATCH_STREAM: u64 = 0x6d69_6c62;

/// Per-bag label coefficients `-y / n_y` for one class over a training subset.
#[derive(Debug, Clone)]
pub(crate) struct Targets {
    /// Indexed by position in the training subset.
    coef: Vec<f64>,
}

impl Targets {
    pub fn new(labels: &[Label], n_pos: usize, n_neg: usize) -> Self {
        let coef = labels
            .iter()
            .map(|l| match l {
                Label::Positive => -1.0 / n_pos as f64,
                Label::Negative => 1.0 / n_neg as f64,
            })
            .collect();
        Self { coef }
    }
}

pub(crate) struct HeadSpec<'t> {
    pub targets: &'t Targets,
    pub c: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub(crate) struct HeadFit {
    pub w: Vec<f64>,
    pub b: f64,
    pub data_loss: f64,
    pub regularized_loss: f64,
}

/// Gaussian initialization: i.i.d. entries with standard deviation `1/sqrt(M)`, zero bias.
pub(crate) fn init_weights(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("finite std");
    (0..dim).map(|_| normal.sample(&mut rng)).collect()
}

/// Per-region multiplier inside the max: `s + eps`, or 1 for the unweighted loss.
#[inline]
fn region_weight(view: &BagView<'_>, k: usize, eps: Option<f64>) -> f64 {
    match eps {
        Some(e) => view.objectness[k] + e,
        None => 1.0,
    }
}

/// For every head, the argmax region and value of the weighted affine score.
fn bag_maxima(
    view: &BagView<'_>,
    weights: &Array2<f64>,
    bias: &Array1<f64>,
    eps: Option<f64>,
    out: &mut Vec<(usize, f64)>,
) {
    let act = view.features.dot(weights);
    out.clear();
    out.resize(weights.ncols(), (0, f64::NEG_INFINITY));
    for (k, row) in act.rows().into_iter().enumerate() {
        let s = region_weight(view, k, eps);
        for (h, (&a, best)) in row.iter().zip(out.iter_mut()).enumerate() {
            let v = s * (a + bias[h]);
            if v > best.1 {
                *best = (k, v);
            }
        }
    }
}

fn weight_matrix(heads: &[Vec<f64>], dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((dim, heads.len()), |(j, h)| heads[h][j])
}

/// Evaluates each head's data term over `subset`, with targets indexed by subset position.
pub(crate) fn data_losses(
    source: &dyn BagSource,
    subset: &[usize],
    targets: &[&Targets],
    params: &[(Vec<f64>, f64)],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    let dim = source.feature_dim();
    let ws: Vec<Vec<f64>> = params.iter().map(|(w, _)| w.clone()).collect();
    let weights = weight_matrix(&ws, dim);
    let bias = Array1::from_iter(params.iter().map(|(_, b)| *b));
    let eps = cfg.score_weighted.then_some(cfg.epsilon);
    let mut totals = vec![0.0; params.len()];
    let mut pos = 0usize;
    let mut maxima = Vec::new();
    for chunk in subset.chunks(cfg.batch_size.max(1)) {
        source.visit(chunk, &mut |_, view| {
            bag_maxima(&view, &weights, &bias, eps, &mut maxima);
            for (h, &(_, u)) in maxima.iter().enumerate() {
                totals[h] += targets[h].coef[pos] * u.tanh();
            }
            pos += 1;
        })?;
    }
    Ok(totals)
}

/// Runs `cfg.iterations` fixed-step SGD updates for every head over `subset`.
///
/// Each step draws `cfg.batch_size` distinct bags uniformly (the whole subset when it is
/// no larger) from a generator seeded by `cfg.seed`. The minibatch gradient is rescaled by
/// `|subset| / |batch|` so it is an unbiased estimate of the full-data gradient; label
/// weights always use the full-subset counts baked into [`Targets`].
pub(crate) fn fit_heads(
    source: &dyn BagSource,
    subset: &[usize],
    heads: &[HeadSpec<'_>],
    cfg: &TrainConfig,
) -> Result<Vec<HeadFit>> {
    let dim = source.feature_dim();
    let n = subset.len();
    let eps = cfg.score_weighted.then_some(cfg.epsilon);
    let mut ws: Vec<Vec<f64>> = heads.iter().map(|h| init_weights(dim, h.seed)).collect();
    let mut bs = vec![0.0f64; heads.len()];

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(BATCH_STREAM);

    let full: Vec<usize> = (0..n).collect();
    let mut positions: Vec<usize> = Vec::with_capacity(cfg.batch_size.min(n));
    let mut batch: Vec<usize> = Vec::with_capacity(cfg.batch_size.min(n));
    let mut grad_w = Array2::<f64>::zeros((heads.len(), dim));
    let mut grad_b = vec![0.0f64; heads.len()];
    let mut maxima = Vec::with_capacity(heads.len());

    for _ in 0..cfg.iterations {
        positions.clear();
        if n <= cfg.batch_size {
            positions.extend_from_slice(&full);
        } else {
            positions.extend(index::sample(&mut rng, n, cfg.batch_size).into_iter());
            positions.sort_unstable();
        }
        batch.clear();
        batch.extend(positions.iter().map(|&p| subset[p]));

        let weights = weight_matrix(&ws, dim);
        let bias = Array1::from_vec(bs.clone());
        grad_w.fill(0.0);
        grad_b.iter_mut().for_each(|g| *g = 0.0);

        let mut cursor = 0usize;
        source.visit(&batch, &mut |_, view| {
            let p = positions[cursor];
            cursor += 1;
            bag_maxima(&view, &weights, &bias, eps, &mut maxima);
            for (h, &(k, u)) in maxima.iter().enumerate() {
                let t = u.tanh();
                let g = heads[h].targets.coef[p] * (1.0 - t * t) * region_weight(&view, k, eps);
                if g == 0.0 {
                    continue;
                }
                let mut row = grad_w.row_mut(h);
                row.scaled_add(g, &view.features.row(k));
                grad_b[h] += g;
            }
        })?;

        let scale = n as f64 / batch.len() as f64;
        for (h, spec) in heads.iter().enumerate() {
            let gw = grad_w.row(h);
            for (w, &g) in ws[h].iter_mut().zip(gw.iter()) {
                *w -= cfg.learning_rate * (scale * g + 2.0 * spec.c * *w);
            }
            bs[h] -= cfg.learning_rate * scale * grad_b[h];
        }
    }

    let params: Vec<(Vec<f64>, f64)> = ws.into_iter().zip(bs).collect();
    let targets: Vec<&Targets> = heads.iter().map(|h| h.targets).collect();
    let losses = data_losses(source, subset, &targets, &params, cfg)?;
    Ok(params
        .into_iter()
        .zip(losses)
        .zip(heads)
        .map(|(((w, b), data_loss), spec)| {
            let reg = spec.c * super::loss::squared_norm(&w);
            HeadFit {
                w,
                b,
                data_loss,
                regularized_loss: data_loss + reg,
            }
        })
        .collect())
}
