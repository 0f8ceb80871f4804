//! On-disk feature archives, ground-truth and detection documents.
//!
//! An archive is a directory holding
//!
//! * `features.bin`: the magic bytes `MILFEAT`, a one-byte version and the feature
//!   dimension `M` as a little-endian `u32`; then, per image, `K` as a `u32` followed by
//!   `K` records of `x1, y1, x2, y2, objectness, feature[0..M]`, all little-endian `f32`;
//! * `manifest.json`: dataset name, class names, `M`, and per image its id, split,
//!   per-class `+1`/`-1` labels, region count and byte offset into the blob;
//! * optionally `ground_truth.jsonl`: one instance box per line.
//!
//! Labels live only in the manifest, so relabeling never touches the blob.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{GroundTruthBox, ImageScore};
use crate::model::{validate_bag, BoundingBox, Detection, FeatureBag, Label, Region};
use crate::trainer::{pack_features, BagSource, BagView};

pub const MAGIC: &[u8; 7] = b"MILFEAT";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 12;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "features.bin";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub image_id: String,
    pub split: Split,
    pub labels: BTreeMap<String, Label>,
    pub region_count: u32,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub format_version: u32,
    pub dataset_name: String,
    pub class_names: Vec<String>,
    pub feature_dim: u32,
    pub images: Vec<ImageEntry>,
}

/// Bytes of one region record for feature dimension `m`.
pub fn record_len(m: u32) -> u64 {
    4 * (5 + u64::from(m))
}

impl ArchiveManifest {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::VersionUnsupported(self.format_version));
        }
        let mut prev: Option<u64> = None;
        for img in &self.images {
            let corrupt = |reason: String| Error::CorruptOffset {
                image_id: img.image_id.clone(),
                reason,
            };
            if img.region_count == 0 {
                return Err(corrupt("region count is zero".into()));
            }
            if img.offset < HEADER_LEN || prev.is_some_and(|p| img.offset <= p) {
                return Err(corrupt(format!("offset {} is not strictly increasing", img.offset)));
            }
            prev = Some(img.offset);
            if let Some(c) = self.class_names.iter().find(|c| !img.labels.contains_key(*c)) {
                return Err(Error::MissingLabel {
                    image_id: img.image_id.clone(),
                    class: c.clone(),
                });
            }
        }
        Ok(())
    }

    /// Indices of images in `split` (all images when `None`), in manifest order.
    pub fn indices(&self, split: Option<Split>) -> Vec<usize> {
        (0..self.images.len())
            .filter(|&i| split.map_or(true, |s| self.images[i].split == s))
            .collect()
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Incremental archive writer; bags are appended one at a time.
pub struct ArchiveWriter {
    dir: PathBuf,
    blob_tmp: PathBuf,
    blob: BufWriter<File>,
    manifest: ArchiveManifest,
    offset: u64,
}

impl ArchiveWriter {
    pub fn create(
        dir: impl AsRef<Path>,
        dataset_name: impl Into<String>,
        class_names: &[String],
        feature_dim: u32,
    ) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let blob_tmp = tmp_path(&dir.join(BLOB_FILE));
        let file = File::create(&blob_tmp).map_err(|e| Error::io(&blob_tmp, e))?;
        let mut blob = BufWriter::with_capacity(1 << 20, file);
        let mut header = Vec::with_capacity(HEADER_LEN as usize);
        header.extend_from_slice(MAGIC);
        header.push(FORMAT_VERSION as u8);
        header.extend_from_slice(&feature_dim.to_le_bytes());
        blob.write_all(&header).map_err(|e| Error::io(&blob_tmp, e))?;
        Ok(Self {
            dir,
            blob_tmp,
            blob,
            manifest: ArchiveManifest {
                format_version: FORMAT_VERSION,
                dataset_name: dataset_name.into(),
                class_names: class_names.to_vec(),
                feature_dim,
                images: Vec::new(),
            },
            offset: HEADER_LEN,
        })
    }

    pub fn push(&mut self, bag: &FeatureBag, split: Split) -> Result<()> {
        let m = self.manifest.feature_dim as usize;
        if bag.feature_dim() != m {
            return Err(Error::InconsistentDims(format!(
                "image `{}` has dimension {}, archive has {m}",
                bag.image_id(),
                bag.feature_dim()
            )));
        }
        let mut labels = BTreeMap::new();
        for c in &self.manifest.class_names {
            let l = bag.label(c).ok_or_else(|| Error::MissingLabel {
                image_id: bag.image_id().to_owned(),
                class: c.clone(),
            })?;
            labels.insert(c.clone(), l);
        }
        let k = bag.len() as u32;
        let mut buf = Vec::with_capacity(4 + bag.len() * record_len(k) as usize);
        buf.extend_from_slice(&k.to_le_bytes());
        for r in bag.regions() {
            for v in r.bbox().coords() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            buf.extend_from_slice(&r.objectness().to_le_bytes());
            for v in r.feature() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        self.blob.write_all(&buf).map_err(|e| Error::io(&self.blob_tmp, e))?;
        self.manifest.images.push(ImageEntry {
            image_id: bag.image_id().to_owned(),
            split,
            labels,
            region_count: k,
            offset: self.offset,
        });
        self.offset += buf.len() as u64;
        Ok(())
    }

    /// Flushes the blob and writes the manifest; both land under their final names
    /// only once complete.
    pub fn finish(mut self) -> Result<ArchiveManifest> {
        self.blob.flush().map_err(|e| Error::io(&self.blob_tmp, e))?;
        drop(self.blob);
        let blob = self.dir.join(BLOB_FILE);
        fs::rename(&self.blob_tmp, &blob).map_err(|e| Error::io(&blob, e))?;
        let json = serde_json::to_vec_pretty(&self.manifest)?;
        atomic_write(&self.dir.join(MANIFEST_FILE), &json)?;
        Ok(self.manifest)
    }
}

/// Writes a complete archive; the dataset is named after the directory.
pub fn write_archive(
    bags: &[FeatureBag],
    splits: &[Split],
    class_names: &[String],
    path: impl AsRef<Path>,
) -> Result<ArchiveManifest> {
    let path = path.as_ref();
    if bags.len() != splits.len() {
        return Err(Error::InvalidConfig(format!(
            "{} bags but {} split tags",
            bags.len(),
            splits.len()
        )));
    }
    let dim = bags.first().map_or(0, FeatureBag::feature_dim);
    if let Some(b) = bags.iter().find(|b| b.feature_dim() != dim) {
        return Err(Error::InconsistentDims(format!(
            "image `{}` has dimension {}, first image has {dim}",
            b.image_id(),
            b.feature_dim()
        )));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut w = ArchiveWriter::create(path, name, class_names, dim as u32)?;
    for (bag, split) in bags.iter().zip(splits) {
        w.push(bag, *split)?;
    }
    w.finish()
}

/// Random-access archive reader. Safe to share between threads.
pub struct ArchiveReader {
    dir: PathBuf,
    manifest: ArchiveManifest,
    blob: Mutex<File>,
    blob_len: u64,
}

impl ArchiveReader {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: ArchiveManifest = serde_json::from_slice(&text)?;
        manifest.validate()?;
        let bpath = dir.join(BLOB_FILE);
        let mut file = File::open(&bpath).map_err(|e| Error::io(&bpath, e))?;
        let blob_len = file.metadata().map_err(|e| Error::io(&bpath, e))?.len();
        let mut header = [0u8; HEADER_LEN as usize];
        file.read_exact(&mut header).map_err(|_| Error::BadMagic(bpath.clone()))?;
        if &header[..7] != MAGIC {
            return Err(Error::BadMagic(bpath));
        }
        if u32::from(header[7]) != FORMAT_VERSION {
            return Err(Error::VersionUnsupported(u32::from(header[7])));
        }
        let m = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes"));
        if m != manifest.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: manifest.feature_dim as usize,
                found: m as usize,
            });
        }
        Ok(Self {
            dir,
            manifest,
            blob: Mutex::new(file),
            blob_len,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &ArchiveManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.manifest.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.images.is_empty()
    }

    /// Reads the raw region records of image `i` into `buf` and returns its region count.
    fn read_records(&self, i: usize, buf: &mut Vec<u8>) -> Result<usize> {
        let entry = &self.manifest.images[i];
        let corrupt = |reason: String| Error::CorruptOffset {
            image_id: entry.image_id.clone(),
            reason,
        };
        let body = u64::from(entry.region_count) * record_len(self.manifest.feature_dim);
        let end = entry.offset + 4 + body;
        if end > self.blob_len {
            return Err(corrupt(format!(
                "record ends at byte {end} but the blob has {} bytes",
                self.blob_len
            )));
        }
        buf.resize(4 + body as usize, 0);
        {
            let mut f = self.blob.lock().expect("blob lock");
            f.seek(SeekFrom::Start(entry.offset))
                .and_then(|_| f.read_exact(buf))
                .map_err(|e| corrupt(e.to_string()))?;
        }
        let k = u32::from_le_bytes(buf[..4].try_into().expect("4 bytes"));
        if k != entry.region_count {
            return Err(corrupt(format!(
                "blob holds {k} regions, manifest says {}",
                entry.region_count
            )));
        }
        Ok(k as usize)
    }

    /// Decodes and validates image `i`.
    pub fn read_bag(&self, i: usize) -> Result<FeatureBag> {
        let mut buf = Vec::new();
        let k = self.read_records(i, &mut buf)?;
        let entry = &self.manifest.images[i];
        let m = self.manifest.feature_dim as usize;
        let mut floats = buf[4..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        let mut regions = Vec::with_capacity(k);
        for _ in 0..k {
            let mut next = || floats.next().expect("length checked");
            let (x1, y1, x2, y2) = (next(), next(), next(), next());
            let s = next();
            let feature: Vec<f32> = (0..m).map(|_| next()).collect();
            let corrupt = |e: Error| Error::CorruptOffset {
                image_id: entry.image_id.clone(),
                reason: e.to_string(),
            };
            let bbox = BoundingBox::new(x1, y1, x2, y2).map_err(corrupt)?;
            regions.push(Region::new(bbox, s, feature).map_err(corrupt)?);
        }
        let bag = FeatureBag::new(entry.image_id.clone(), regions, entry.labels.clone())?;
        validate_bag(&bag, m)?;
        Ok(bag)
    }

    /// Streams the bags of one split (all splits when `None`) in manifest order.
    pub fn iter(&self, split: Option<Split>) -> impl Iterator<Item = Result<FeatureBag>> + '_ {
        self.manifest.indices(split).into_iter().map(move |i| self.read_bag(i))
    }

    pub fn ground_truth(&self) -> Result<Vec<GroundTruthBox>> {
        let p = self.dir.join(GROUND_TRUTH_FILE);
        if p.exists() {
            read_ground_truth(p)
        } else {
            Ok(Vec::new())
        }
    }
}

/// Loads every bag of a split, validated.
pub fn read_archive(path: impl AsRef<Path>, split_filter: Option<Split>) -> Result<Vec<FeatureBag>> {
    let reader = ArchiveReader::open(path)?;
    reader.iter(split_filter).collect()
}

/// Training view of one split that decodes bags from disk on demand.
///
/// Only the manifest stays resident; each visited bag is decoded into a reusable
/// buffer, so memory use is bounded by the largest single image.
pub struct ArchiveSource {
    reader: ArchiveReader,
    indices: Vec<usize>,
    normalize: bool,
    scratch: Mutex<(Vec<u8>, Array2<f64>, Vec<f64>)>,
}

impl ArchiveSource {
    pub fn open(dir: impl AsRef<Path>, split: Option<Split>, normalize: bool) -> Result<Self> {
        let reader = ArchiveReader::open(dir)?;
        let indices = reader.manifest.indices(split);
        Ok(Self {
            reader,
            indices,
            normalize,
            scratch: Mutex::new((Vec::new(), Array2::zeros((0, 0)), Vec::new())),
        })
    }

    pub fn reader(&self) -> &ArchiveReader {
        &self.reader
    }
}

impl BagSource for ArchiveSource {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn feature_dim(&self) -> usize {
        self.reader.manifest.feature_dim as usize
    }

    fn image_id(&self, index: usize) -> &str {
        &self.reader.manifest.images[self.indices[index]].image_id
    }

    fn label(&self, index: usize, class: &str) -> Result<Label> {
        let entry = &self.reader.manifest.images[self.indices[index]];
        entry.labels.get(class).copied().ok_or_else(|| Error::MissingLabel {
            image_id: entry.image_id.clone(),
            class: class.to_owned(),
        })
    }

    fn l2_normalized(&self) -> bool {
        self.normalize
    }

    fn visit(&self, indices: &[usize], f: &mut dyn FnMut(usize, BagView<'_>)) -> Result<()> {
        let m = self.feature_dim();
        let rec = 5 + m;
        let mut guard = self.scratch.lock().expect("scratch lock");
        let (buf, features, objectness) = &mut *guard;
        let mut floats: Vec<f32> = Vec::new();
        for &i in indices {
            self.reader.read_records(self.indices[i], buf)?;
            floats.clear();
            floats.extend(
                buf[4..]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
            );
            objectness.clear();
            objectness.extend(floats.chunks_exact(rec).map(|r| f64::from(r[4])));
            pack_features(floats.chunks_exact(rec).map(|r| &r[5..]), m, self.normalize, features);
            f(
                i,
                BagView {
                    features: features.view(),
                    objectness,
                },
            );
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct GroundTruthRecord {
    image_id: String,
    class_name: String,
    x1: f32,
    y1: f32,
    x2: f32,
    y2: f32,
    #[serde(default)]
    ignore: bool,
}

fn parse_lines<T, R: BufRead>(
    reader: R,
    source_name: &str,
    mut parse: impl FnMut(&str) -> std::result::Result<T, String>,
) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source_name, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        out.push(parse(trimmed).map_err(|message| Error::Parse {
            source_name: source_name.to_owned(),
            line: n + 1,
            message,
        })?);
    }
    Ok(out)
}

/// Parses a ground-truth document: one JSON object per line with `image_id`,
/// `class_name`, `x1`, `y1`, `x2`, `y2` and an optional `ignore` flag.
pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<Vec<GroundTruthBox>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_ground_truth(BufReader::new(file), &path.display().to_string())
}

pub fn parse_ground_truth(reader: impl BufRead, source_name: &str) -> Result<Vec<GroundTruthBox>> {
    parse_lines(reader, source_name, |line| {
        let r: GroundTruthRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let bbox = BoundingBox::new(r.x1, r.y1, r.x2, r.y2).map_err(|e| e.to_string())?;
        Ok(GroundTruthBox::new(r.image_id, r.class_name, bbox, r.ignore))
    })
}

pub fn write_ground_truth(path: impl AsRef<Path>, gts: &[GroundTruthBox]) -> Result<()> {
    let mut out = Vec::new();
    for g in gts {
        let [x1, y1, x2, y2] = g.bbox().coords();
        let r = GroundTruthRecord {
            image_id: g.image_id().to_owned(),
            class_name: g.class_name().to_owned(),
            x1,
            y1,
            x2,
            y2,
            ignore: g.ignore(),
        };
        serde_json::to_writer(&mut out, &r)?;
        out.push(b'\n');
    }
    atomic_write(path.as_ref(), &out)
}

/// One line of a detections document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DetectionRecord {
    Detection {
        image_id: String,
        class_name: String,
        x1: f32,
        y1: f32,
        x2: f32,
        y2: f32,
        score: f64,
    },
    /// Best region score of an image, with the image's label; these lines define the
    /// evaluated image set and feed classification-by-detection.
    Image {
        image_id: String,
        class_name: String,
        score: f64,
        label: Label,
    },
}

/// Detections plus image-level scores, as produced by the `detect` command.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionsDocument {
    pub detections: Vec<Detection>,
    pub images: Vec<ImageScore>,
}

impl DetectionsDocument {
    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for d in &self.detections {
            let [x1, y1, x2, y2] = d.bbox().coords();
            serde_json::to_writer(
                &mut out,
                &DetectionRecord::Detection {
                    image_id: d.image_id().to_owned(),
                    class_name: d.class_name().to_owned(),
                    x1,
                    y1,
                    x2,
                    y2,
                    score: d.score(),
                },
            )?;
            out.push(b'\n');
        }
        for s in &self.images {
            serde_json::to_writer(
                &mut out,
                &DetectionRecord::Image {
                    image_id: s.image_id.clone(),
                    class_name: s.class_name.clone(),
                    score: s.score,
                    label: s.label,
                },
            )?;
            out.push(b'\n');
        }
        Ok(out)
    }

    pub fn parse(reader: impl BufRead, source_name: &str) -> Result<Self> {
        let records = parse_lines(reader, source_name, |line| {
            serde_json::from_str::<DetectionRecord>(line).map_err(|e| e.to_string())
        })?;
        let mut doc = Self::default();
        for (n, r) in records.into_iter().enumerate() {
            match r {
                DetectionRecord::Detection {
                    image_id,
                    class_name,
                    x1,
                    y1,
                    x2,
                    y2,
                    score,
                } => {
                    let wrap = |e: Error| Error::Parse {
                        source_name: source_name.to_owned(),
                        line: n + 1,
                        message: e.to_string(),
                    };
                    let bbox = BoundingBox::new(x1, y1, x2, y2).map_err(wrap)?;
                    doc.detections
                        .push(Detection::new(image_id, class_name, bbox, score).map_err(wrap)?);
                }
                DetectionRecord::Image {
                    image_id,
                    class_name,
                    score,
                    label,
                } => doc.images.push(ImageScore {
                    image_id,
                    class_name,
                    score,
                    label,
                }),
            }
        }
        Ok(doc)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(BufReader::new(file), &path.display().to_string())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        atomic_write(path.as_ref(), &self.to_jsonl()?)
    }

    /// Class names in first-seen order.
    pub fn class_names(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for c in self
            .images
            .iter()
            .map(|s| &s.class_name)
            .chain(self.detections.iter().map(|d| d.class_name().to_owned()).collect::<Vec<_>>().iter())
        {
            if !seen.contains(c) {
                seen.push(c.clone());
            }
        }
        seen
    }
}
