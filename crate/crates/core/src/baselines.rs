//! Comparison learners: the MAX top-objectness SVM and the alternating MI-SVM.
//!
//! Both sit on one inner solver, a linear SVM minimizing
//! `0.5 * ||w||^2 + weight * (H_+ + H_-) / 2`, where `H_y` is the mean hinge
//! `max(0, 1 - y (w.x + b))` over the samples of label `y`, by full-batch subgradient
//! descent with normalized steps `lr / sqrt(t + 1)`, keeping the best iterate. Balancing
//! the two means keeps MI-SVM's many negative regions from swamping the few positive
//! representatives. No randomness is involved, so equal inputs give bitwise-equal
//! solutions.

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{classification_ap, ApStyle};
use crate::model::{FeatureBag, Label, LinearScorer, Method};
use crate::trainer::pack_features;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    /// Hinge weights tried by cross-validation (MAX baseline).
    pub weight_grid: Vec<f64>,
    pub folds: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Hinge weight of the MI-SVM inner problems.
    pub weight: f64,
    /// Seeds the fold assignment.
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            weight_grid: vec![0.01, 0.1, 1.0, 10.0, 100.0],
            folds: 3,
            iterations: 300,
            learning_rate: 1.0,
            weight: 1.0,
            seed: 0,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.weight_grid.is_empty() {
            return bad("weight_grid must not be empty".into());
        }
        if let Some(w) = self.weight_grid.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return bad(format!("weight_grid entries must be positive, got {w}"));
        }
        if !(self.weight > 0.0 && self.weight.is_finite()) {
            return bad(format!("weight must be positive, got {}", self.weight));
        }
        if self.folds < 2 {
            return bad(format!("folds must be >= 2, got {}", self.folds));
        }
        if self.iterations == 0 {
            return bad("iterations must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct SvmFit {
    w: Vec<f64>,
    b: f64,
    objective: f64,
}

fn check_labels(y: &[f64], class: &str) -> Result<()> {
    if !y.iter().any(|&v| v > 0.0) {
        return Err(Error::NoPositives(class.to_owned()));
    }
    if !y.iter().any(|&v| v < 0.0) {
        return Err(Error::NoNegatives(class.to_owned()));
    }
    Ok(())
}

fn fit_svm(x: ArrayView2<'_, f64>, y: &[f64], weight: f64, cfg: &SvmConfig) -> SvmFit {
    let (n, dim) = x.dim();
    let n_pos = y.iter().filter(|&&v| v > 0.0).count();
    let per_class = [weight / (2 * (n - n_pos)) as f64, weight / (2 * n_pos) as f64];
    let coef: Vec<f64> = y.iter().map(|&v| per_class[usize::from(v > 0.0)]).collect();
    let mut w = Array1::<f64>::zeros(dim);
    let mut b = 0.0;
    let mut best = SvmFit {
        w: w.to_vec(),
        b,
        objective: f64::INFINITY,
    };
    let mut active = Array1::<f64>::zeros(n);
    for t in 0..=cfg.iterations {
        let margins = x.dot(&w);
        let mut hinge = 0.0;
        let mut gb = 0.0;
        for (((a, &m), &yi), &ci) in active.iter_mut().zip(margins.iter()).zip(y).zip(&coef) {
            let slack = 1.0 - yi * (m + b);
            if slack > 0.0 {
                hinge += ci * slack;
                *a = ci * yi;
                gb -= ci * yi;
            } else {
                *a = 0.0;
            }
        }
        let objective = 0.5 * w.dot(&w) + hinge;
        if objective < best.objective {
            best = SvmFit {
                w: w.to_vec(),
                b,
                objective,
            };
        }
        if t == cfg.iterations {
            break;
        }
        let mut gw = w.clone();
        for (row, &a) in x.rows().into_iter().zip(active.iter()) {
            if a != 0.0 {
                gw.scaled_add(-a, &row);
            }
        }
        let norm = (gw.dot(&gw) + gb * gb).sqrt();
        if norm == 0.0 {
            break;
        }
        let step = cfg.learning_rate / ((t + 1) as f64).sqrt() / norm;
        w.scaled_add(-step, &gw);
        b -= step * gb;
    }
    best
}

fn to_matrix(features: &[&[f32]], dim: usize) -> Array2<f64> {
    let mut x = Array2::zeros((0, 0));
    pack_features(features.iter().copied(), dim, false, &mut x);
    x
}

fn scorer_from(class: &str, method: Method, fit: SvmFit) -> Result<LinearScorer> {
    LinearScorer::new(class, method, fit.w, fit.b, 0.0, fit.objective, 0)
}

fn common_dim(features: &[&[f32]]) -> Result<usize> {
    let dim = features.first().map_or(0, |f| f.len());
    if let Some(f) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: f.len(),
        });
    }
    Ok(dim)
}

/// Plain linear SVM on labeled vectors. The returned scorer's `final_loss` is the
/// objective value reached.
pub fn train_linear_svm(
    class: &str,
    samples: &[(&[f32], Label)],
    weight: f64,
    config: &SvmConfig,
) -> Result<LinearScorer> {
    config.validate()?;
    let y: Vec<f64> = samples.iter().map(|(_, l)| l.sign()).collect();
    check_labels(&y, class)?;
    let features: Vec<&[f32]> = samples.iter().map(|(f, _)| *f).collect();
    let dim = common_dim(&features)?;
    let fit = fit_svm(to_matrix(&features, dim).view(), &y, weight, config);
    scorer_from(class, Method::Svm, fit)
}

/// Index of the highest-objectness region, lowest index on ties.
pub fn top_objectness_region(bag: &FeatureBag) -> usize {
    let mut best = 0;
    for (k, r) in bag.regions().iter().enumerate() {
        if r.objectness() > bag.regions()[best].objectness() {
            best = k;
        }
    }
    best
}

fn bag_labels(bags: &[FeatureBag], class: &str) -> Result<Vec<Label>> {
    bags.iter()
        .map(|b| {
            b.label(class).ok_or_else(|| Error::MissingLabel {
                image_id: b.image_id().to_owned(),
                class: class.to_owned(),
            })
        })
        .collect()
}

/// Stratified fold id per sample: each polarity is shuffled and dealt round-robin.
fn fold_assignment(labels: &[Label], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; labels.len()];
    for polarity in [Label::Positive, Label::Negative] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == polarity).collect();
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            fold[i] = j % folds;
        }
    }
    fold
}

/// Cross-validation score of one hinge weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightScore {
    pub weight: f64,
    /// Mean held-out AP over folds where it is defined.
    pub mean_ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxRecord {
    pub class_name: String,
    pub chosen_weight: f64,
    pub cv: Vec<WeightScore>,
}

/// MAX baseline: every bag collapses to its top-objectness region, the hinge weight is
/// picked by k-fold cross-validated AP on those samples (ties go to the smaller
/// weight), and the final SVM is refit on all of them.
pub fn train_max_baseline(
    bags: &[FeatureBag],
    class: &str,
    config: &SvmConfig,
) -> Result<(LinearScorer, MaxRecord)> {
    config.validate()?;
    let labels = bag_labels(bags, class)?;
    let y: Vec<f64> = labels.iter().map(|l| l.sign()).collect();
    check_labels(&y, class)?;
    let features: Vec<&[f32]> = bags
        .iter()
        .map(|b| b.regions()[top_objectness_region(b)].feature())
        .collect();
    let dim = common_dim(&features)?;
    let x = to_matrix(&features, dim);

    let fold = fold_assignment(&labels, config.folds, config.seed);
    let mut grid: Vec<f64> = config.weight_grid.clone();
    grid.sort_by(f64::total_cmp);
    let mut cv = Vec::with_capacity(grid.len());
    for &weight in &grid {
        let mut aps = Vec::new();
        for f in 0..config.folds {
            let train: Vec<usize> = (0..bags.len()).filter(|&i| fold[i] != f).collect();
            let test: Vec<usize> = (0..bags.len()).filter(|&i| fold[i] == f).collect();
            let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            if test.is_empty() || check_labels(&ytr, class).is_err() {
                continue;
            }
            let fit = fit_svm(x.select(ndarray::Axis(0), &train).view(), &ytr, weight, config);
            let w = Array1::from_vec(fit.w);
            let scores: Vec<f64> = test.iter().map(|&i| x.row(i).dot(&w) + fit.b).collect();
            let tl: Vec<Label> = test.iter().map(|&i| labels[i]).collect();
            if let Some(ap) = classification_ap(&scores, &tl, ApStyle::AllPoints) {
                aps.push(ap);
            }
        }
        let mean_ap = (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64);
        cv.push(WeightScore { weight, mean_ap });
    }
    let mut chosen = 0;
    for (i, s) in cv.iter().enumerate() {
        if s.mean_ap.unwrap_or(f64::NEG_INFINITY) > cv[chosen].mean_ap.unwrap_or(f64::NEG_INFINITY) {
            chosen = i;
        }
    }
    let fit = fit_svm(x.view(), &y, grid[chosen], config);
    let scorer = scorer_from(class, Method::Max, fit)?;
    Ok((
        scorer,
        MaxRecord {
            class_name: class.to_owned(),
            chosen_weight: grid[chosen],
            cv,
        },
    ))
}

/// One SVM solve of the MI-SVM alternation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiSvmStep {
    pub objective: f64,
    /// Positive bags whose representative changed before this solve (0 for the first).
    pub changed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiSvmRecord {
    pub class_name: String,
    pub steps: Vec<MiSvmStep>,
    /// Whether the final selection is a fixed point of reselection.
    pub converged: bool,
    /// Reselection rounds performed.
    pub iterations: usize,
    /// Representative region per bag, `None` for negative bags.
    pub representatives: Vec<Option<usize>>,
}

/// Region closest (Euclidean) to the bag's mean feature, lowest index on ties.
pub fn nearest_to_mean(bag: &FeatureBag) -> usize {
    let dim = bag.feature_dim();
    let k = bag.len() as f64;
    let mut mean = vec![0.0f64; dim];
    for r in bag.regions() {
        for (m, &v) in mean.iter_mut().zip(r.feature()) {
            *m += f64::from(v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= k);
    let dist = |f: &[f32]| -> f64 {
        f.iter().zip(&mean).map(|(&v, m)| (f64::from(v) - m).powi(2)).sum()
    };
    let mut best = (0, dist(bag.regions()[0].feature()));
    for (i, r) in bag.regions().iter().enumerate().skip(1) {
        let d = dist(r.feature());
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// MI-SVM: alternate an SVM on {positive-bag representatives} and {every region of
/// every negative bag} with re-picking each positive bag's representative as its
/// highest-decision region. Stops at a fixed point or after `max_iterations`
/// reselection rounds; `max_iterations = 0` returns the SVM on the initial
/// nearest-to-mean representatives.
pub fn train_mi_svm(
    bags: &[FeatureBag],
    class: &str,
    config: &SvmConfig,
    max_iterations: usize,
) -> Result<(LinearScorer, MiSvmRecord)> {
    config.validate()?;
    let labels = bag_labels(bags, class)?;
    let pos: Vec<usize> = (0..bags.len()).filter(|&i| labels[i].is_positive()).collect();
    let neg: Vec<usize> = (0..bags.len()).filter(|&i| !labels[i].is_positive()).collect();
    if pos.is_empty() {
        return Err(Error::NoPositives(class.to_owned()));
    }
    if neg.is_empty() {
        return Err(Error::NoNegatives(class.to_owned()));
    }
    let neg_features: Vec<&[f32]> = neg
        .iter()
        .flat_map(|&i| bags[i].regions().iter().map(|r| r.feature()))
        .collect();
    let dim = common_dim(&neg_features)?;
    for &i in &pos {
        if bags[i].feature_dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bags[i].feature_dim(),
            });
        }
    }
    let n_neg = neg_features.len();
    let mut x = Array2::<f64>::zeros((n_neg + pos.len(), dim));
    for (mut row, f) in x.rows_mut().into_iter().zip(&neg_features) {
        row.iter_mut().zip(f.iter()).for_each(|(d, &s)| *d = f64::from(s));
    }
    let y: Vec<f64> = std::iter::repeat(-1.0)
        .take(n_neg)
        .chain(std::iter::repeat(1.0).take(pos.len()))
        .collect();
    let set_reps = |x: &mut Array2<f64>, reps: &[usize]| {
        for (j, (&i, &k)) in pos.iter().zip(reps).enumerate() {
            let src = bags[i].regions()[k].feature();
            let mut row = x.row_mut(n_neg + j);
            row.iter_mut().zip(src).for_each(|(d, &s)| *d = f64::from(s));
        }
    };

    let mut reps: Vec<usize> = pos.iter().map(|&i| nearest_to_mean(&bags[i])).collect();
    set_reps(&mut x, &reps);
    let mut fit = fit_svm(x.view(), &y, config.weight, config);
    let mut steps = vec![MiSvmStep {
        objective: fit.objective,
        changed: 0,
    }];
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..max_iterations {
        iterations += 1;
        let w = Array1::from_vec(fit.w.clone());
        let new_reps: Vec<usize> = pos
            .iter()
            .map(|&i| {
                let regions = bags[i].regions();
                let mut best = (0, f64::NEG_INFINITY);
                for (k, r) in regions.iter().enumerate() {
                    let v: f64 = r.feature().iter().zip(w.iter()).map(|(&a, &b)| f64::from(a) * b).sum();
                    if v > best.1 {
                        best = (k, v);
                    }
                }
                best.0
            })
            .collect();
        let changed = new_reps.iter().zip(&reps).filter(|(a, b)| a != b).count();
        if changed == 0 {
            converged = true;
            break;
        }
        reps = new_reps;
        set_reps(&mut x, &reps);
        fit = fit_svm(x.view(), &y, config.weight, config);
        steps.push(MiSvmStep {
            objective: fit.objective,
            changed,
        });
    }
    let mut representatives = vec![None; bags.len()];
    for (&i, &k) in pos.iter().zip(&reps) {
        representatives[i] = Some(k);
    }
    let scorer = scorer_from(class, Method::MiSvm, fit)?;
    Ok((
        scorer,
        MiSvmRecord {
            class_name: class.to_owned(),
            steps,
            converged,
            iterations,
            representatives,
        },
    ))
}
