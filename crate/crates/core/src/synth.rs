//! Synthetic bags with planted linear concepts.
//!
//! Every positive bag of a class holds `positives_per_positive_bag` regions whose
//! projection on the class direction is at least `concept_margin`; every other region
//! projects to at most `-concept_margin`. The planted `(direction, 0)` scorer is therefore
//! an exact zero-error detector, which turns detection AP into a measure of how well a
//! learner recovers the concept from image-level labels alone.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::archive::Split;
use crate::error::{Error, Result};
use crate::eval::GroundTruthBox;
use crate::model::{BoundingBox, FeatureBag, Label, LinearScorer, Method, Region};

/// How objectness relates to the planted instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectnessMode {
    /// Planted regions draw from U(0.7, 1), others from U(0, 0.8).
    Informative,
    /// Everything from U(0, 1).
    Uniform,
    /// Planted regions draw from U(0, 0.3), others from U(0.4, 1): the top-objectness
    /// region is never a planted one.
    Adversarial,
}

impl std::str::FromStr for ObjectnessMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "informative" => Ok(Self::Informative),
            "uniform" => Ok(Self::Uniform),
            "adversarial" => Ok(Self::Adversarial),
            other => Err(Error::InvalidConfig(format!("unknown objectness mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_images: usize,
    pub k_regions: usize,
    pub feature_dim: usize,
    pub positive_fraction: f64,
    /// Planted direction of the first class; drawn from `seed` when absent.
    pub concept_direction: Option<Vec<f64>>,
    pub concept_margin: f64,
    pub positives_per_positive_bag: usize,
    pub noise_std: f64,
    pub objectness_mode: ObjectnessMode,
    pub seed: u64,
    pub n_classes: usize,
    /// Fraction of images (the trailing ones) tagged as test split.
    pub test_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_images: 2000,
            k_regions: 30,
            feature_dim: 64,
            positive_fraction: 0.3,
            concept_direction: None,
            concept_margin: 1.0,
            positives_per_positive_bag: 1,
            noise_std: 1.0,
            objectness_mode: ObjectnessMode::Informative,
            seed: 0,
            n_classes: 1,
            test_fraction: 0.0,
        }
    }
}

/// Side length of a region's square box and the pitch of the grid they sit on.
const CELL: f32 = 32.0;
const PITCH: f32 = 40.0;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.k_regions == 0 || self.feature_dim == 0 {
            return bad("k_regions and feature_dim must be >= 1".into());
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return bad(format!("positive_fraction must be in (0,1), got {}", self.positive_fraction));
        }
        if !(self.concept_margin > 0.0) || !(self.noise_std > 0.0) {
            return bad("concept_margin and noise_std must be > 0".into());
        }
        if self.n_classes == 0 || self.n_classes > self.feature_dim {
            return bad(format!(
                "n_classes must be in 1..={} (the feature dimension)",
                self.feature_dim
            ));
        }
        if self.positives_per_positive_bag == 0
            || self.positives_per_positive_bag * self.n_classes > self.k_regions
        {
            return bad(format!(
                "positives_per_positive_bag must be >= 1 and fit {} classes into {} regions",
                self.n_classes, self.k_regions
            ));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad(format!("test_fraction must be in [0,1), got {}", self.test_fraction));
        }
        if let Some(v) = &self.concept_direction {
            if v.len() != self.feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.feature_dim,
                    found: v.len(),
                });
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return bad(format!("concept_direction must have unit norm, got {norm}"));
            }
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        class_names(self.n_classes)
    }

    pub fn n_test(&self) -> usize {
        (self.test_fraction * self.n_images as f64).round() as usize
    }
}

/// `concept` for a single class, `concept0`, `concept1`, ... otherwise.
pub fn class_names(n: usize) -> Vec<String> {
    if n == 1 {
        vec!["concept".to_owned()]
    } else {
        (0..n).map(|c| format!("concept{c}")).collect()
    }
}

/// One generated image.
#[derive(Debug, Clone)]
pub struct SynthImage {
    pub bag: FeatureBag,
    pub split: Split,
    pub ground_truth: Vec<GroundTruthBox>,
    /// Region indices of the planted instances, per class.
    pub planted: BTreeMap<String, Vec<usize>>,
}

/// Random-access generator: image `i` depends only on `(config, i)`.
pub struct SynthGenerator {
    cfg: SynthConfig,
    classes: Vec<String>,
    directions: Vec<Vec<f64>>,
    /// `positive[i][c]`
    positive: Vec<Vec<bool>>,
}

impl SynthGenerator {
    pub fn new(cfg: SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let directions = draw_directions(&cfg, &mut rng);
        let n_test = cfg.n_test();
        let n_train = cfg.n_images - n_test;
        let mut positive = vec![vec![false; cfg.n_classes]; cfg.n_images];
        for (start, len) in [(0, n_train), (n_train, n_test)] {
            let n_pos = (cfg.positive_fraction * len as f64).round() as usize;
            for c in 0..cfg.n_classes {
                let mut idx: Vec<usize> = (start..start + len).collect();
                idx.shuffle(&mut rng);
                for &i in &idx[..n_pos] {
                    positive[i][c] = true;
                }
            }
        }
        Ok(Self {
            classes: cfg.class_names(),
            cfg,
            directions,
            positive,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    pub fn class_names(&self) -> &[String] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.cfg.n_images
    }

    pub fn is_empty(&self) -> bool {
        self.cfg.n_images == 0
    }

    /// The zero-error scorer `(direction_c, 0)` for every class.
    pub fn planted_scorers(&self) -> Vec<LinearScorer> {
        self.classes
            .iter()
            .zip(&self.directions)
            .map(|(name, v)| {
                LinearScorer::new(name.clone(), Method::MiMax, v.clone(), 0.0, 0.01, 0.0, self.cfg.seed)
                    .expect("unit direction")
            })
            .collect()
    }

    pub fn image(&self, i: usize) -> SynthImage {
        let cfg = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64 + 1);
        let image_id = format!("img{i:06}");
        let k = cfg.k_regions;
        let m = cfg.feature_dim;

        // owner[r] = class whose instance region r carries
        let pos_classes: Vec<usize> = (0..cfg.n_classes).filter(|&c| self.positive[i][c]).collect();
        let n_planted = pos_classes.len() * cfg.positives_per_positive_bag;
        let slots = index::sample(&mut rng, k, n_planted).into_vec();
        let mut owner: Vec<Option<usize>> = vec![None; k];
        let mut planted: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (j, &slot) in slots.iter().enumerate() {
            let c = pos_classes[j / cfg.positives_per_positive_bag];
            owner[slot] = Some(c);
            planted.entry(self.classes[c].clone()).or_default().push(slot);
        }
        for v in planted.values_mut() {
            v.sort_unstable();
        }

        let cols = (k as f64).sqrt().ceil() as usize;
        let mut regions = Vec::with_capacity(k);
        let mut ground_truth = Vec::new();
        let mut z = vec![0.0f64; m];
        for (r, own) in owner.iter().enumerate() {
            for v in z.iter_mut() {
                *v = cfg.noise_std * rng.sample::<f64, _>(StandardNormal);
            }
            for (c, dir) in self.directions.iter().enumerate() {
                let spread = cfg.noise_std * rng.sample::<f64, _>(StandardNormal).abs();
                let target = if *own == Some(c) {
                    cfg.concept_margin + spread
                } else {
                    -(cfg.concept_margin + spread)
                };
                let proj: f64 = dir.iter().zip(&z).map(|(a, b)| a * b).sum();
                for (zj, dj) in z.iter_mut().zip(dir) {
                    *zj += (target - proj) * dj;
                }
            }
            let u: f64 = rng.gen();
            let s = match (cfg.objectness_mode, own.is_some()) {
                (ObjectnessMode::Informative, true) => 0.7 + 0.3 * u,
                (ObjectnessMode::Informative, false) => 0.8 * u,
                (ObjectnessMode::Uniform, _) => u,
                (ObjectnessMode::Adversarial, true) => 0.3 * u,
                (ObjectnessMode::Adversarial, false) => 0.4 + 0.6 * u,
            };
            let (row, col) = (r / cols, r % cols);
            let x1 = col as f32 * PITCH;
            let y1 = row as f32 * PITCH;
            let bbox = BoundingBox::new(x1, y1, x1 + CELL, y1 + CELL).expect("grid cell");
            let feature = z.iter().map(|&v| v as f32).collect();
            regions.push(Region::new(bbox, s as f32, feature).expect("objectness in [0,1]"));
            if let Some(c) = own {
                ground_truth.push(GroundTruthBox::new(image_id.clone(), self.classes[*c].clone(), bbox, false));
            }
        }
        let labels = self
            .classes
            .iter()
            .enumerate()
            .map(|(c, name)| (name.clone(), Label::from_bool(self.positive[i][c])))
            .collect();
        let split = if i >= cfg.n_images - cfg.n_test() {
            Split::Test
        } else {
            Split::Train
        };
        SynthImage {
            bag: FeatureBag::new(image_id, regions, labels).expect("k_regions >= 1"),
            split,
            ground_truth,
            planted,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = SynthImage> + '_ {
        (0..self.len()).map(|i| self.image(i))
    }
}

/// Orthonormal class directions; the first is `concept_direction` when given.
fn draw_directions(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let m = cfg.feature_dim;
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_classes);
    while dirs.len() < cfg.n_classes {
        let mut v: Vec<f64> = match (&cfg.concept_direction, dirs.is_empty()) {
            (Some(given), true) => given.clone(),
            _ => (0..m).map(|_| rng.sample(StandardNormal)).collect(),
        };
        for d in &dirs {
            let p: f64 = d.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (vj, dj) in v.iter_mut().zip(d) {
                *vj -= p * dj;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        dirs.push(v);
    }
    dirs
}

/// A fully materialized synthetic dataset.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub class_names: Vec<String>,
    pub bags: Vec<FeatureBag>,
    pub splits: Vec<Split>,
    pub ground_truth: Vec<GroundTruthBox>,
    pub planted: Vec<LinearScorer>,
    pub planted_regions: Vec<BTreeMap<String, Vec<usize>>>,
}

impl SynthDataset {
    /// Bags (and their indices) belonging to one split.
    pub fn split(&self, split: Split) -> Vec<FeatureBag> {
        self.bags
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == split)
            .map(|(b, _)| b.clone())
            .collect()
    }

    /// Ground truth restricted to images of one split.
    pub fn ground_truth_for(&self, split: Split) -> Vec<GroundTruthBox> {
        let ids: std::collections::HashSet<&str> = self
            .bags
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == split)
            .map(|(b, _)| b.image_id())
            .collect();
        self.ground_truth
            .iter()
            .filter(|g| ids.contains(g.image_id()))
            .cloned()
            .collect()
    }
}

/// Generates every image of `cfg` in memory.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    let generator = SynthGenerator::new(cfg.clone())?;
    let mut ds = SynthDataset {
        class_names: generator.class_names().to_vec(),
        bags: Vec::with_capacity(cfg.n_images),
        splits: Vec::with_capacity(cfg.n_images),
        ground_truth: Vec::new(),
        planted: generator.planted_scorers(),
        planted_regions: Vec::with_capacity(cfg.n_images),
    };
    for img in generator.iter() {
        ds.bags.push(img.bag);
        ds.splits.push(img.split);
        ds.ground_truth.extend(img.ground_truth);
        ds.planted_regions.push(img.planted);
    }
    Ok(ds)
}
