//! MI-max training: the tanh-smoothed max-over-regions objective minimized by SGD with
//! random restarts, and the MI-max-C variant that picks the regularization constant on a
//! held-out split.

mod loss;
mod sgd;
mod source;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use loss::{
    loss_gradient, loss_phi, loss_phi_s, regularized_loss, score_region, ClassCounts, Gradient,
};
pub use source::{BagSource, BagView, MemorySource};

pub(crate) use source::pack_features;

use crate::error::{Error, Result};
use crate::model::{FeatureBag, Label, LinearScorer, Method, TrainConfig, DEFAULT_C_GRID};
use sgd::{HeadSpec, Targets};

/// Outcome of one random restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartOutcome {
    pub seed: u64,
    /// Data term (score-weighted when enabled) on the full training data.
    pub data_loss: f64,
    /// Data term plus `C * ||w||^2`.
    pub regularized_loss: f64,
}

/// Validation loss reached by the restart selected for one value of C.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CValidation {
    pub c: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub class_name: String,
    pub c: f64,
    pub restarts: Vec<RestartOutcome>,
    pub chosen_restart: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub validation: Vec<CValidation>,
}

/// Seed used by restart `r`.
pub fn restart_seed(base: u64, r: usize) -> u64 {
    base.wrapping_add(r as u64)
}

/// Class targets over a subset of source indices.
struct ClassSubset {
    labels: Vec<Label>,
    counts: ClassCounts,
}

fn class_subset(source: &dyn BagSource, subset: &[usize], class: &str) -> Result<ClassSubset> {
    let labels = subset
        .iter()
        .map(|&i| source.label(i, class))
        .collect::<Result<Vec<_>>>()?;
    let n_pos = labels.iter().filter(|l| l.is_positive()).count();
    let counts = ClassCounts::new(n_pos, labels.len() - n_pos, class)?;
    Ok(ClassSubset { labels, counts })
}

impl ClassSubset {
    fn targets(&self) -> Targets {
        Targets::new(&self.labels, self.counts.n_pos(), self.counts.n_neg())
    }
}

fn make_scorer(
    class: &str,
    method: Method,
    fit: &sgd::HeadFit,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<LinearScorer> {
    Ok(LinearScorer::new(
        class,
        method,
        fit.w.clone(),
        fit.b,
        cfg.epsilon,
        fit.data_loss,
        seed,
    )?
    .with_l2_normalize(cfg.l2_normalize))
}

/// Lowest loss; ties go to the earliest index.
fn argmin(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn check_source(source: &dyn BagSource, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if source.l2_normalized() != cfg.l2_normalize {
        return Err(Error::InvalidConfig(
            "bag source normalization does not match the training configuration".into(),
        ));
    }
    Ok(())
}

/// Trains one parameter vector from the Gaussian initialization drawn with `seed`.
pub fn train_one(
    bags: &[FeatureBag],
    class: &str,
    config: &TrainConfig,
    c: f64,
    seed: u64,
) -> Result<LinearScorer> {
    let source = MemorySource::new(bags, config.l2_normalize)?;
    let cfg = TrainConfig { c, ..config.clone() };
    check_source(&source, &cfg)?;
    let subset: Vec<usize> = (0..source.len()).collect();
    let cs = class_subset(&source, &subset, class)?;
    let targets = cs.targets();
    let fit = sgd::fit_heads(
        &source,
        &subset,
        &[HeadSpec {
            targets: &targets,
            c,
            seed,
        }],
        &cfg,
    )?;
    make_scorer(class, Method::MiMax, &fit[0], &cfg, seed)
}

/// Runs `config.restarts` restarts and keeps the one with the lowest data term.
pub fn train_restarts(
    bags: &[FeatureBag],
    class: &str,
    config: &TrainConfig,
    c: f64,
) -> Result<(LinearScorer, TrainRecord)> {
    let source = MemorySource::new(bags, config.l2_normalize)?;
    let cfg = TrainConfig { c, ..config.clone() };
    let mut out = train_classes(&source, &[class.to_owned()], &cfg)?;
    Ok(out.remove(0))
}

/// Trains every class in `classes` with restarts, all restarts of all classes sharing one
/// pass over each minibatch. Uses `config.c` as the regularization constant.
pub fn train_classes(
    source: &dyn BagSource,
    classes: &[String],
    config: &TrainConfig,
) -> Result<Vec<(LinearScorer, TrainRecord)>> {
    check_source(source, config)?;
    let subset: Vec<usize> = (0..source.len()).collect();
    let targets: Vec<Targets> = classes
        .iter()
        .map(|c| class_subset(source, &subset, c).map(|cs| cs.targets()))
        .collect::<Result<_>>()?;
    let mut heads = Vec::new();
    for t in &targets {
        for r in 0..config.restarts {
            heads.push(HeadSpec {
                targets: t,
                c: config.c,
                seed: restart_seed(config.seed, r),
            });
        }
    }
    let fits = sgd::fit_heads(source, &subset, &heads, config)?;
    classes
        .iter()
        .zip(fits.chunks(config.restarts))
        .map(|(class, fits)| {
            let chosen = argmin(fits.iter().map(|f| f.data_loss));
            let seed = restart_seed(config.seed, chosen);
            let scorer = make_scorer(class, Method::MiMax, &fits[chosen], config, seed)?;
            let record = TrainRecord {
                class_name: class.clone(),
                c: config.c,
                restarts: outcomes(fits, config.seed),
                chosen_restart: chosen,
                chosen_c: None,
                validation: Vec::new(),
            };
            Ok((scorer, record))
        })
        .collect()
}

fn outcomes(fits: &[sgd::HeadFit], base_seed: u64) -> Vec<RestartOutcome> {
    fits.iter()
        .enumerate()
        .map(|(r, f)| RestartOutcome {
            seed: restart_seed(base_seed, r),
            data_loss: f.data_loss,
            regularized_loss: f.regularized_loss,
        })
        .collect()
}

/// Stratified train/validation split of `0..labels.len()`.
///
/// Each polarity is shuffled with a generator seeded by `seed` and
/// `round(val_fraction * n_polarity)` of it goes to validation. Both returned index
/// lists are ascending.
pub fn stratified_split(labels: &[Label], val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for polarity in [Label::Positive, Label::Negative] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == polarity).collect();
        idx.shuffle(&mut rng);
        let n_val = (val_fraction * idx.len() as f64).round() as usize;
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// MI-max-C: for each C of the grid, restarts on the training split; the (w, b, C)
/// with the lowest data term on the validation split wins (ties go to the smaller C).
pub fn grid_search_c(
    bags: &[FeatureBag],
    class: &str,
    config: &TrainConfig,
) -> Result<(LinearScorer, TrainRecord)> {
    let source = MemorySource::new(bags, config.l2_normalize)?;
    grid_search_c_on(&source, class, config)
}

/// [`grid_search_c`] over an arbitrary bag source.
pub fn grid_search_c_on(
    source: &dyn BagSource,
    class: &str,
    config: &TrainConfig,
) -> Result<(LinearScorer, TrainRecord)> {
    check_source(source, config)?;
    let grid = config.c_grid.clone().unwrap_or_else(|| DEFAULT_C_GRID.to_vec());
    let all: Vec<usize> = (0..source.len()).collect();
    let labels = all
        .iter()
        .map(|&i| source.label(i, class))
        .collect::<Result<Vec<_>>>()?;
    let (train_pos, val_pos) = stratified_split(&labels, config.val_fraction, config.seed);

    let split_err = |split: &'static str| Error::SplitTooSmall {
        class: class.to_owned(),
        split,
    };
    let train = class_subset(source, &train_pos, class).map_err(|_| split_err("train"))?;
    let val = class_subset(source, &val_pos, class).map_err(|_| split_err("validation"))?;
    let train_targets = train.targets();
    let val_targets = val.targets();

    let mut heads = Vec::new();
    for &c in &grid {
        for r in 0..config.restarts {
            heads.push(HeadSpec {
                targets: &train_targets,
                c,
                seed: restart_seed(config.seed, r),
            });
        }
    }
    let fits = sgd::fit_heads(source, &train_pos, &heads, config)?;

    let chosen_per_c: Vec<usize> = fits
        .chunks(config.restarts)
        .map(|fs| argmin(fs.iter().map(|f| f.data_loss)))
        .collect();
    let params: Vec<(Vec<f64>, f64)> = chosen_per_c
        .iter()
        .enumerate()
        .map(|(gi, &r)| {
            let f = &fits[gi * config.restarts + r];
            (f.w.clone(), f.b)
        })
        .collect();
    let val_refs = vec![&val_targets; grid.len()];
    let val_losses = sgd::data_losses(source, &val_pos, &val_refs, &params, config)?;
    let best_c = argmin(val_losses.iter().copied());
    let chosen = chosen_per_c[best_c];
    let fit = &fits[best_c * config.restarts + chosen];
    let cfg = TrainConfig {
        c: grid[best_c],
        ..config.clone()
    };
    let seed = restart_seed(config.seed, chosen);
    let scorer = make_scorer(class, Method::MiMaxC, fit, &cfg, seed)?;
    let record = TrainRecord {
        class_name: class.to_owned(),
        c: grid[best_c],
        restarts: outcomes(
            &fits[best_c * config.restarts..(best_c + 1) * config.restarts],
            config.seed,
        ),
        chosen_restart: chosen,
        chosen_c: Some(grid[best_c]),
        validation: grid
            .iter()
            .zip(&val_losses)
            .map(|(&c, &v)| CValidation {
                c,
                validation_loss: v,
            })
            .collect(),
    };
    Ok((scorer, record))
}
