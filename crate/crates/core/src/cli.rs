//! The `mimax` command line: `synth`, `train`, `detect`, `eval` and `bench`.
//!
//! Every command writes its outputs atomically and leaves a run manifest next to its
//! main output (`<out>.run.json`) echoing the full configuration, seeds and the sha256
//! of each input file.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archive::{
    atomic_write, read_archive, write_ground_truth, ArchiveManifest, ArchiveReader, ArchiveSource,
    ArchiveWriter, DetectionsDocument, Split, BLOB_FILE, GROUND_TRUTH_FILE, MANIFEST_FILE,
};
use crate::baselines::{train_max_baseline, train_mi_svm, MaxRecord, MiSvmRecord, SvmConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate_detections, run_detection, ApStyle, EvalConfig};
use crate::model::{LinearScorer, TrainConfig, DEFAULT_C_GRID};
use crate::synth::{ObjectnessMode, SynthConfig, SynthGenerator};
use crate::trainer::{grid_search_c_on, train_classes, BagSource, MemorySource, TrainRecord};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Archives whose blob exceeds this are streamed from disk during training.
pub const STREAM_THRESHOLD_BYTES: u64 = 1 << 30;

/// Wall-clock the reference GPU implementation needs for 20 classes on 5011 images.
pub const PAPER_SECONDS: f64 = 750.0;

#[derive(Debug, Parser)]
#[command(name = "mimax", version, about = "Weakly supervised detection by multiple-instance max-margin learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic feature archive with planted concepts.
    Synth(SynthArgs),
    /// Train one scorer per class from image-level labels.
    Train(TrainArgs),
    /// Score every region of an archive and keep the surviving detections.
    Detect(DetectArgs),
    /// Compute AP tables from a detections document.
    Eval(EvalArgs),
    /// Time fused multi-class training at a configurable scale.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Mimax,
    Max,
    Misvm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Test,
    All,
}

impl SplitArg {
    fn filter(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectnessArg {
    Informative,
    Uniform,
    Adversarial,
}

impl From<ObjectnessArg> for ObjectnessMode {
    fn from(a: ObjectnessArg) -> Self {
        match a {
            ObjectnessArg::Informative => ObjectnessMode::Informative,
            ObjectnessArg::Uniform => ObjectnessMode::Uniform,
            ObjectnessArg::Adversarial => ObjectnessMode::Adversarial,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApStyleArg {
    ElevenPoint,
    AllPoints,
}

impl From<ApStyleArg> for ApStyle {
    fn from(a: ApStyleArg) -> Self {
        match a {
            ApStyleArg::ElevenPoint => ApStyle::ElevenPoint,
            ApStyleArg::AllPoints => ApStyle::AllPoints,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Output archive directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub n_images: usize,
    #[arg(long, default_value_t = 30)]
    pub k_regions: usize,
    #[arg(long, default_value_t = 64)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 1)]
    pub n_classes: usize,
    #[arg(long, default_value_t = 0.3)]
    pub positive_fraction: f64,
    #[arg(long, default_value_t = 1)]
    pub positives_per_bag: usize,
    #[arg(long, default_value_t = 1.0)]
    pub margin: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise_std: f64,
    #[arg(long, value_enum, default_value_t = ObjectnessArg::Informative)]
    pub objectness: ObjectnessArg,
    /// Fraction of (trailing) images tagged as the test split.
    #[arg(long, default_value_t = 0.0)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the planted zero-error scorers as a model file.
    #[arg(long)]
    pub planted_model: Option<PathBuf>,
}

impl SynthArgs {
    pub fn config(&self) -> SynthConfig {
        SynthConfig {
            n_images: self.n_images,
            k_regions: self.k_regions,
            feature_dim: self.feature_dim,
            positive_fraction: self.positive_fraction,
            concept_direction: None,
            concept_margin: self.margin,
            positives_per_positive_bag: self.positives_per_bag,
            noise_std: self.noise_std,
            objectness_mode: self.objectness.into(),
            seed: self.seed,
            n_classes: self.n_classes,
            test_fraction: self.test_fraction,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Feature archive directory; training uses its train split.
    #[arg(long)]
    pub features: PathBuf,
    /// Class to train (repeatable); all archive classes when omitted.
    #[arg(long = "class")]
    pub classes: Vec<String>,
    #[arg(long, value_enum, default_value_t = MethodArg::Mimax)]
    pub method: MethodArg,
    /// MI-max-C: choose C on a held-out split.
    #[arg(long)]
    pub grid_c: bool,
    /// Comma-separated C grid for --grid-c.
    #[arg(long, value_delimiter = ',')]
    pub c_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 12)]
    pub restarts: usize,
    #[arg(long, default_value_t = 300)]
    pub iters: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.01)]
    pub eps: f64,
    #[arg(long, default_value_t = 1000)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.0)]
    pub c: f64,
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
    /// Drop the objectness weighting from the loss.
    #[arg(long)]
    pub unweighted: bool,
    #[arg(long)]
    pub l2_normalize: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Decode bags from disk on demand instead of loading the split.
    #[arg(long)]
    pub stream: bool,
    /// Comma-separated hinge weights cross-validated by the MAX baseline.
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.1, 1.0, 10.0, 100.0])]
    pub svm_weights: Vec<f64>,
    /// Hinge weight used by MI-SVM.
    #[arg(long, default_value_t = 1.0)]
    pub svm_weight: f64,
    #[arg(long, default_value_t = 3)]
    pub folds: usize,
    #[arg(long, default_value_t = 300)]
    pub svm_iters: usize,
    #[arg(long, default_value_t = 1.0)]
    pub svm_lr: f64,
    #[arg(long, default_value_t = 50)]
    pub misvm_iters: usize,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
}

impl TrainArgs {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.iters,
            learning_rate: self.lr,
            epsilon: self.eps,
            batch_size: self.batch_size,
            restarts: self.restarts,
            c: self.c,
            c_grid: self
                .grid_c
                .then(|| self.c_grid.clone().unwrap_or_else(|| DEFAULT_C_GRID.to_vec())),
            val_fraction: self.val_fraction,
            seed: self.seed,
            score_weighted: !self.unweighted,
            l2_normalize: self.l2_normalize,
        }
    }

    pub fn svm_config(&self) -> SvmConfig {
        SvmConfig {
            weight_grid: self.svm_weights.clone(),
            folds: self.folds,
            iterations: self.svm_iters,
            learning_rate: self.svm_lr,
            weight: self.svm_weight,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DetectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    pub split: SplitArg,
    #[arg(long, default_value_t = 0.3)]
    pub nms_iou: f64,
    #[arg(long, default_value_t = 0.05)]
    pub threshold: f64,
    /// Output detections document (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub detections: PathBuf,
    /// Ground-truth document; without it every detection AP is reported undefined.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// IoU threshold (repeatable), one AP column each.
    #[arg(long = "iou")]
    pub ious: Vec<f64>,
    #[arg(long, value_enum, default_value_t = ApStyleArg::ElevenPoint)]
    pub ap_style: ApStyleArg,
    /// Output prefix: writes `<out>.txt` and `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BenchArgs {
    /// Existing archive to train on; a synthetic one is generated when absent.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Shortcut for 5011 images x 300 regions x 2048 dims, 20 classes.
    #[arg(long)]
    pub paper_scale: bool,
    #[arg(long, default_value_t = 200)]
    pub n_images: usize,
    #[arg(long, default_value_t = 30)]
    pub k_regions: usize,
    #[arg(long, default_value_t = 64)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 4)]
    pub n_classes: usize,
    #[arg(long, default_value_t = 12)]
    pub restarts: usize,
    #[arg(long, default_value_t = 300)]
    pub iters: usize,
    #[arg(long, default_value_t = 1000)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub stream: bool,
    /// Where the synthetic archive goes; a temporary directory, removed afterwards, when absent.
    #[arg(long)]
    pub workdir: Option<PathBuf>,
    /// Write the report as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl BenchArgs {
    fn synth_config(&self) -> SynthConfig {
        let (n, k, m, c) = if self.paper_scale {
            (5011, 300, 2048, 20)
        } else {
            (self.n_images, self.k_regions, self.feature_dim, self.n_classes)
        };
        SynthConfig {
            n_images: n,
            k_regions: k,
            feature_dim: m,
            n_classes: c,
            seed: self.seed,
            ..SynthConfig::default()
        }
    }
}

/// Provenance of one input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<InputDigest>,
    pub version: String,
    /// Seconds per phase.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    fn new(command: &str, argv: &[String], config: &impl Serialize, seeds: Vec<u64>) -> Result<Self> {
        Ok(Self {
            command: command.to_owned(),
            argv: argv.to_vec(),
            config: serde_json::to_value(config)?,
            seeds,
            inputs: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            timings: BTreeMap::new(),
        })
    }

    fn digest(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    fn digest_archive(&mut self, dir: &Path) -> Result<()> {
        for name in [MANIFEST_FILE, BLOB_FILE, GROUND_TRUTH_FILE] {
            let p = dir.join(name);
            if name != GROUND_TRUTH_FILE || p.exists() {
                self.digest(&p)?;
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        atomic_write(path, &serde_json::to_vec_pretty(self)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// `<path>.run.json`
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".run.json");
    out.with_file_name(name)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Per-class training trace stored next to the scorers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TrainingLog {
    MiMax(TrainRecord),
    Max(MaxRecord),
    MiSvm(MiSvmRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub scorers: Vec<LinearScorer>,
    #[serde(default)]
    pub records: Vec<TrainingLog>,
}

impl ModelFile {
    pub fn new(scorers: Vec<LinearScorer>, records: Vec<TrainingLog>) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            scorers,
            records,
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_slice(&bytes)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::VersionUnsupported(m.format_version));
        }
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        atomic_write(path.as_ref(), &serde_json::to_vec_pretty(self)?)
    }
}

fn resolve_classes(manifest: &ArchiveManifest, requested: &[String]) -> Result<Vec<String>> {
    if requested.is_empty() {
        return Ok(manifest.class_names.clone());
    }
    for c in requested {
        if !manifest.class_names.contains(c) {
            return Err(Error::UnknownClass {
                class: c.clone(),
                available: manifest.class_names.clone(),
            });
        }
    }
    Ok(requested.to_vec())
}

fn blob_len(dir: &Path) -> Result<u64> {
    let p = dir.join(BLOB_FILE);
    Ok(fs::metadata(&p).map_err(|e| Error::io(&p, e))?.len())
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

pub fn cmd_synth(args: &SynthArgs, argv: &[String]) -> Result<()> {
    let t0 = Instant::now();
    let cfg = args.config();
    let generator = SynthGenerator::new(cfg.clone())?;
    write_synth_archive(&generator, &args.out)?;
    if let Some(p) = &args.planted_model {
        ModelFile::new(generator.planted_scorers(), Vec::new()).write(p)?;
    }
    let mut run = RunManifest::new("synth", argv, &cfg, vec![cfg.seed])?;
    run.timings.insert("total".into(), secs(t0));
    run.write(&manifest_path(&args.out))
}

/// Streams every generated image into an archive plus its ground-truth document.
pub fn write_synth_archive(generator: &SynthGenerator, out: &Path) -> Result<ArchiveManifest> {
    let name = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "synth".into());
    let cfg = generator.config();
    let mut writer = ArchiveWriter::create(out, name, generator.class_names(), cfg.feature_dim as u32)?;
    let mut gts = Vec::new();
    for img in generator.iter() {
        writer.push(&img.bag, img.split)?;
        gts.extend(img.ground_truth);
    }
    let manifest = writer.finish()?;
    write_ground_truth(out.join(GROUND_TRUTH_FILE), &gts)?;
    Ok(manifest)
}

pub fn cmd_train(args: &TrainArgs, argv: &[String]) -> Result<()> {
    let t0 = Instant::now();
    let reader = ArchiveReader::open(&args.features)?;
    let classes = resolve_classes(reader.manifest(), &args.classes)?;
    let tcfg = args.train_config();
    let scfg = args.svm_config();
    let mut scorers = Vec::new();
    let mut records = Vec::new();

    match args.method {
        MethodArg::Mimax => {
            tcfg.validate()?;
            let stream = args.stream || blob_len(&args.features)? > STREAM_THRESHOLD_BYTES;
            let bags;
            let source: Box<dyn BagSource> = if stream {
                Box::new(ArchiveSource::open(&args.features, Some(Split::Train), tcfg.l2_normalize)?)
            } else {
                bags = read_archive(&args.features, Some(Split::Train))?;
                Box::new(MemorySource::new(&bags, tcfg.l2_normalize)?)
            };
            if args.grid_c {
                for class in &classes {
                    let (s, r) = grid_search_c_on(source.as_ref(), class, &tcfg)?;
                    scorers.push(s);
                    records.push(TrainingLog::MiMax(r));
                }
            } else {
                for (s, r) in train_classes(source.as_ref(), &classes, &tcfg)? {
                    scorers.push(s);
                    records.push(TrainingLog::MiMax(r));
                }
            }
        }
        MethodArg::Max | MethodArg::Misvm => {
            scfg.validate()?;
            let bags = read_archive(&args.features, Some(Split::Train))?;
            for class in &classes {
                if args.method == MethodArg::Max {
                    let (s, r) = train_max_baseline(&bags, class, &scfg)?;
                    scorers.push(s);
                    records.push(TrainingLog::Max(r));
                } else {
                    let (s, r) = train_mi_svm(&bags, class, &scfg, args.misvm_iters)?;
                    scorers.push(s);
                    records.push(TrainingLog::MiSvm(r));
                }
            }
        }
    }
    let train_secs = secs(t0);
    ModelFile::new(scorers, records).write(&args.out)?;

    let seeds = match args.method {
        MethodArg::Mimax => (0..tcfg.restarts)
            .map(|r| crate::trainer::restart_seed(tcfg.seed, r))
            .collect(),
        _ => vec![args.seed],
    };
    let config = serde_json::json!({
        "args": args,
        "train": tcfg,
        "svm": scfg,
        "classes": classes,
    });
    let mut run = RunManifest::new("train", argv, &config, seeds)?;
    run.digest_archive(&args.features)?;
    run.timings.insert("train".into(), train_secs);
    run.timings.insert("total".into(), secs(t0));
    run.write(&manifest_path(&args.out))
}

pub fn cmd_detect(args: &DetectArgs, argv: &[String]) -> Result<()> {
    let t0 = Instant::now();
    let model = ModelFile::read(&args.model)?;
    let reader = ArchiveReader::open(&args.features)?;
    let m = reader.manifest().feature_dim as usize;
    for s in &model.scorers {
        if s.dim() != m {
            return Err(Error::DimensionMismatch {
                expected: s.dim(),
                found: m,
            });
        }
    }
    let cfg = EvalConfig {
        nms_iou: args.nms_iou,
        confidence_threshold: args.threshold,
        ..EvalConfig::default()
    };
    cfg.validate()?;
    let mut doc = DetectionsDocument::default();
    for bag in reader.iter(args.split.filter()) {
        let (dets, images) = run_detection(&model.scorers, std::slice::from_ref(&bag?), &cfg)?;
        doc.detections.extend(dets);
        doc.images.extend(images);
    }
    doc.write(&args.out)?;
    let config = serde_json::json!({ "args": args, "eval": cfg });
    let mut run = RunManifest::new("detect", argv, &config, Vec::new())?;
    run.digest(&args.model)?;
    run.digest_archive(&args.features)?;
    run.timings.insert("total".into(), secs(t0));
    run.write(&manifest_path(&args.out))
}

fn with_extension(prefix: &Path, ext: &str) -> PathBuf {
    let mut name = prefix.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(ext);
    prefix.with_file_name(name)
}

/// Returns the rendered table, which is also written to `<out>.txt`.
pub fn cmd_eval(args: &EvalArgs, argv: &[String]) -> Result<String> {
    let t0 = Instant::now();
    let doc = DetectionsDocument::read(&args.detections)?;
    let gts = match &args.gt {
        Some(p) => crate::archive::read_ground_truth(p)?,
        None => Vec::new(),
    };
    let ious = if args.ious.is_empty() {
        vec![0.5]
    } else {
        args.ious.clone()
    };
    let cfg = EvalConfig {
        eval_iou: ious[0],
        ap_style: args.ap_style.into(),
        ..EvalConfig::default()
    };
    let report = evaluate_detections(&doc.class_names(), &doc.detections, &doc.images, &gts, &cfg, &ious)?;
    let table = report.render_table();
    atomic_write(&with_extension(&args.out, "txt"), table.as_bytes())?;
    atomic_write(&with_extension(&args.out, "json"), report.to_json().as_bytes())?;
    let mut run = RunManifest::new("eval", argv, args, Vec::new())?;
    run.digest(&args.detections)?;
    if let Some(p) = &args.gt {
        run.digest(p)?;
    }
    run.timings.insert("total".into(), secs(t0));
    run.write(&manifest_path(&args.out))?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub n_images: usize,
    pub k_regions: usize,
    pub feature_dim: usize,
    pub n_classes: usize,
    pub restarts: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub streamed: bool,
    /// Seconds spent generating the synthetic archive (0 for a given archive).
    pub synth_seconds: f64,
    pub train_seconds: f64,
    pub seconds_per_class: f64,
    pub seconds_per_iteration: f64,
    /// Bag-head evaluations per second during training.
    pub bag_head_visits_per_second: f64,
    pub paper_seconds: f64,
}

impl BenchReport {
    pub fn render(&self) -> String {
        format!(
            "{} images x {} regions x {} dims, {} classes x {} restarts, {} iterations (batch {}), {}\n\
             train {:.2} s total, {:.2} s per class, {:.4} s per iteration, {:.3e} bag-head visits/s\n\
             reference figure {:.0} s; ratio {:.2}\n",
            self.n_images,
            self.k_regions,
            self.feature_dim,
            self.n_classes,
            self.restarts,
            self.iterations,
            self.batch_size,
            if self.streamed { "streamed from disk" } else { "in memory" },
            self.train_seconds,
            self.seconds_per_class,
            self.seconds_per_iteration,
            self.bag_head_visits_per_second,
            self.paper_seconds,
            self.train_seconds / self.paper_seconds,
        )
    }
}

pub fn cmd_bench(args: &BenchArgs, argv: &[String]) -> Result<BenchReport> {
    let t0 = Instant::now();
    let mut synth_seconds = 0.0;
    let mut cleanup = None;
    let dir = match &args.features {
        Some(p) => p.clone(),
        None => {
            let dir = args.workdir.clone().unwrap_or_else(|| {
                std::env::temp_dir().join(format!("mimax-bench-{}", std::process::id()))
            });
            if args.workdir.is_none() {
                cleanup = Some(dir.clone());
            }
            let generator = SynthGenerator::new(args.synth_config())?;
            write_synth_archive(&generator, &dir)?;
            synth_seconds = secs(t0);
            dir
        }
    };
    let result = bench_on(args, &dir, synth_seconds, argv);
    if let Some(d) = cleanup {
        let _ = fs::remove_dir_all(d);
    }
    result
}

fn bench_on(args: &BenchArgs, dir: &Path, synth_seconds: f64, argv: &[String]) -> Result<BenchReport> {
    let reader = ArchiveReader::open(dir)?;
    let classes = reader.manifest().class_names.clone();
    let manifest = reader.manifest().clone();
    drop(reader);
    let cfg = TrainConfig {
        iterations: args.iters,
        batch_size: args.batch_size,
        restarts: args.restarts,
        seed: args.seed,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let stream = args.stream || blob_len(dir)? > STREAM_THRESHOLD_BYTES;
    let t = Instant::now();
    let n_train;
    {
        let bags;
        let source: Box<dyn BagSource> = if stream {
            Box::new(ArchiveSource::open(dir, Some(Split::Train), false)?)
        } else {
            bags = read_archive(dir, Some(Split::Train))?;
            Box::new(MemorySource::new(&bags, false)?)
        };
        n_train = source.len();
        train_classes(source.as_ref(), &classes, &cfg)?;
    }
    let train_seconds = secs(t);
    let k = manifest.images.first().map_or(0, |i| i.region_count as usize);
    let batch = cfg.batch_size.min(n_train);
    let heads = classes.len() * cfg.restarts;
    let report = BenchReport {
        n_images: manifest.images.len(),
        k_regions: k,
        feature_dim: manifest.feature_dim as usize,
        n_classes: classes.len(),
        restarts: cfg.restarts,
        iterations: cfg.iterations,
        batch_size: cfg.batch_size,
        streamed: stream,
        synth_seconds,
        train_seconds,
        seconds_per_class: train_seconds / classes.len().max(1) as f64,
        seconds_per_iteration: train_seconds / cfg.iterations.max(1) as f64,
        bag_head_visits_per_second: (cfg.iterations * batch + n_train) as f64 * heads as f64 / train_seconds,
        paper_seconds: PAPER_SECONDS,
    };
    if let Some(out) = &args.out {
        atomic_write(out, &serde_json::to_vec_pretty(&report)?)?;
        let mut run = RunManifest::new("bench", argv, args, vec![args.seed])?;
        if args.features.is_some() {
            run.digest_archive(dir)?;
        }
        run.timings.insert("synth".into(), synth_seconds);
        run.timings.insert("train".into(), train_seconds);
        run.write(&manifest_path(out))?;
    }
    Ok(report)
}

/// Parses `argv` (program name first) and runs the command. Output meant for the user is
/// printed to stdout.
pub fn run<I, T>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = Cli::try_parse_from(&argv).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let echo: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    dispatch(cli, &echo)
}

pub fn dispatch(cli: Cli, argv: &[String]) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a, argv),
        Command::Train(a) => cmd_train(&a, argv),
        Command::Detect(a) => cmd_detect(&a, argv),
        Command::Eval(a) => {
            print!("{}", cmd_eval(&a, argv)?);
            Ok(())
        }
        Command::Bench(a) => {
            print!("{}", cmd_bench(&a, argv)?.render());
            Ok(())
        }
    }
}
