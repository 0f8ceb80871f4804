//! Detection-time inference and the PASCAL-style evaluation protocol.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoundingBox, Detection, FeatureBag, Label, LinearScorer, Region, ScoreFn};

/// An annotated instance. Ignored boxes neither reward nor penalize a detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    image_id: String,
    class_name: String,
    #[serde(rename = "box")]
    bbox: BoundingBox,
    #[serde(default)]
    ignore: bool,
}

impl GroundTruthBox {
    pub fn new(
        image_id: impl Into<String>,
        class_name: impl Into<String>,
        bbox: BoundingBox,
        ignore: bool,
    ) -> Self {
        Self {
            image_id: image_id.into(),
            class_name: class_name.into(),
            bbox,
            ignore,
        }
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

    pub fn ignore(&self) -> bool {
        self.ignore
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApStyle {
    /// Mean of interpolated precision at recall 0, 0.1, ..., 1.
    ElevenPoint,
    /// Area under the interpolated precision envelope.
    AllPoints,
}

impl std::str::FromStr for ApStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eleven-point" | "11" | "voc07" => Ok(Self::ElevenPoint),
            "all-points" | "all" => Ok(Self::AllPoints),
            other => Err(Error::InvalidConfig(format!("unknown AP style `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub nms_iou: f64,
    pub confidence_threshold: f64,
    pub eval_iou: f64,
    pub ap_style: ApStyle,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            nms_iou: 0.3,
            confidence_threshold: 0.05,
            eval_iou: 0.5,
            ap_style: ApStyle::ElevenPoint,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(Error::InvalidConfig(format!("nms_iou must be in [0,1], got {}", self.nms_iou)));
        }
        if !(self.eval_iou > 0.0 && self.eval_iou <= 1.0) {
            return Err(Error::InvalidConfig(format!("eval_iou must be in (0,1], got {}", self.eval_iou)));
        }
        if !self.confidence_threshold.is_finite() {
            return Err(Error::InvalidConfig("confidence threshold must be finite".into()));
        }
        Ok(())
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (f64::from(a.x2().min(b.x2())) - f64::from(a.x1().max(b.x1()))).max(0.0);
    let ih = (f64::from(a.y2().min(b.y2())) - f64::from(a.y1().max(b.y1()))).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Indices of `scores` by descending score; equal scores keep their input order.
fn rank_desc(scores: impl Iterator<Item = f64>) -> Vec<usize> {
    let scores: Vec<f64> = scores.collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    order
}

/// Greedy non-maximum suppression.
///
/// Keeps the best remaining detection and drops every other one whose IoU with it is
/// strictly greater than `iou_threshold`. Output is sorted by descending score.
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let order = rank_desc(detections.iter().map(Detection::score));
    let mut suppressed = vec![false; order.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[pos] {
            continue;
        }
        let kept = &detections[i];
        for (later, &j) in order.iter().enumerate().skip(pos + 1) {
            if !suppressed[later] && iou(kept.bbox(), detections[j].bbox()) > iou_threshold {
                suppressed[later] = true;
            }
        }
        keep.push(kept.clone());
    }
    keep
}

/// Confidence of one region under `score_fn`.
pub fn region_score(scorer: &LinearScorer, region: &Region, score_fn: ScoreFn) -> Result<f64> {
    let affine = scorer.decision(region.feature())?;
    Ok(match score_fn {
        ScoreFn::Tanh => ((f64::from(region.objectness()) + scorer.epsilon()) * affine).tanh(),
        ScoreFn::Decision => affine,
    })
}

/// Scores every region, keeps the ones above the confidence threshold, then applies NMS.
pub fn detect(
    scorer: &LinearScorer,
    bag: &FeatureBag,
    cfg: &EvalConfig,
    score_fn: ScoreFn,
) -> Result<Vec<Detection>> {
    let mut candidates = Vec::new();
    for region in bag.regions() {
        let s = region_score(scorer, region, score_fn)?;
        if s > cfg.confidence_threshold {
            candidates.push(Detection::new(bag.image_id(), scorer.class_name(), *region.bbox(), s)?);
        }
    }
    Ok(nms(&candidates, cfg.nms_iou))
}

/// Image-level score per bag: the best region score, with no threshold and no NMS.
pub fn classification_by_detection(scorer: &LinearScorer, bags: &[FeatureBag]) -> Result<Vec<f64>> {
    bags.iter()
        .map(|bag| {
            bag.regions().iter().try_fold(f64::NEG_INFINITY, |best, r| {
                Ok(best.max(region_score(scorer, r, scorer.score_fn())?))
            })
        })
        .collect()
}

/// AP from a ranked list of outcomes (`true` = true positive, `false` = false positive)
/// against `n_pos` relevant items.
pub fn ap_from_ranked(outcomes: &[bool], n_pos: usize, style: ApStyle) -> Option<f64> {
    if n_pos == 0 {
        return None;
    }
    let npos = n_pos as f64;
    let mut precision = Vec::with_capacity(outcomes.len());
    let mut recall = Vec::with_capacity(outcomes.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &hit in outcomes {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(tp as f64 / npos);
    }
    Some(match style {
        ApStyle::ElevenPoint => {
            let mut sum = 0.0;
            for t in 0..=10 {
                let thr = t as f64 / 10.0;
                let p = precision
                    .iter()
                    .zip(&recall)
                    .filter(|(_, r)| **r >= thr)
                    .map(|(p, _)| *p)
                    .fold(0.0, f64::max);
                sum += p;
            }
            sum / 11.0
        }
        ApStyle::AllPoints => {
            let mut mrec = Vec::with_capacity(recall.len() + 2);
            mrec.push(0.0);
            mrec.extend_from_slice(&recall);
            mrec.push(1.0);
            let mut mpre = Vec::with_capacity(precision.len() + 2);
            mpre.push(0.0);
            mpre.extend_from_slice(&precision);
            mpre.push(0.0);
            for i in (0..mpre.len() - 1).rev() {
                mpre[i] = mpre[i].max(mpre[i + 1]);
            }
            let mut ap = 0.0;
            for i in 0..mrec.len() - 1 {
                if mrec[i + 1] != mrec[i] {
                    ap += (mrec[i + 1] - mrec[i]) * mpre[i + 1];
                }
            }
            ap
        }
    })
}

/// PASCAL detection AP for one class.
///
/// Detections are ranked by score (ties keep input order). Each one claims the not yet
/// matched ground-truth box of its image with the highest IoU; at or above `eval_iou`
/// it is a true positive, or is skipped when that box is flagged `ignore`. Anything else
/// is a false positive. Returns `None` when no non-ignored ground truth exists.
///
/// Both inputs are expected to hold a single class.
pub fn average_precision(
    detections: &[Detection],
    gts: &[GroundTruthBox],
    cfg: &EvalConfig,
) -> Option<f64> {
    let n_pos = gts.iter().filter(|g| !g.ignore).count();
    if n_pos == 0 {
        return None;
    }
    let mut by_image: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_image.entry(g.image_id.as_str()).or_default().push(i);
    }
    let mut matched = vec![false; gts.len()];
    let mut outcomes = Vec::with_capacity(detections.len());
    for i in rank_desc(detections.iter().map(Detection::score)) {
        let det = &detections[i];
        let mut best: Option<(usize, f64)> = None;
        for &g in by_image.get(det.image_id()).map(Vec::as_slice).unwrap_or(&[]) {
            if matched[g] {
                continue;
            }
            let o = iou(det.bbox(), &gts[g].bbox);
            if best.map_or(true, |(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        match best {
            Some((g, o)) if o >= cfg.eval_iou => {
                if gts[g].ignore {
                    continue;
                }
                matched[g] = true;
                outcomes.push(true);
            }
            _ => outcomes.push(false),
        }
    }
    ap_from_ranked(&outcomes, n_pos, cfg.ap_style)
}

/// Image-level ranking AP: images ranked by score, relevant when their label is positive.
pub fn classification_ap(scores: &[f64], labels: &[Label], style: ApStyle) -> Option<f64> {
    let n_pos = labels.iter().filter(|l| l.is_positive()).count();
    let outcomes: Vec<bool> = rank_desc(scores.iter().copied())
        .into_iter()
        .map(|i| labels[i].is_positive())
        .collect();
    ap_from_ranked(&outcomes, n_pos, style)
}

/// Image-level score of one class, as emitted next to detections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub image_id: String,
    pub class_name: String,
    pub score: f64,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_name: String,
    /// One entry per evaluated IoU threshold; `None` when the class has no ground truth.
    pub ap: Vec<Option<f64>>,
    pub classification_ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ious: Vec<f64>,
    pub ap_style: ApStyle,
    pub classes: Vec<ClassReport>,
    /// Mean over classes with a defined AP, per IoU threshold.
    pub mean_ap: Vec<Option<f64>>,
    pub mean_classification_ap: Option<f64>,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_owned(), |x| format!("{:.1}", 100.0 * x))
}

impl EvalReport {
    /// Plain-text table, AP shown as percentages with one decimal.
    pub fn render_table(&self) -> String {
        let mut header = vec!["class".to_owned()];
        header.extend(self.ious.iter().map(|t| format!("AP@{t}")));
        header.push("cls-AP".to_owned());
        let mut rows: Vec<Vec<String>> = self
            .classes
            .iter()
            .map(|c| {
                let mut r = vec![c.class_name.clone()];
                r.extend(c.ap.iter().map(|a| pct(*a)));
                r.push(pct(c.classification_ap));
                r
            })
            .collect();
        let mut mean = vec!["mean".to_owned()];
        mean.extend(self.mean_ap.iter().map(|a| pct(*a)));
        mean.push(pct(self.mean_classification_ap));
        rows.push(mean);

        let widths: Vec<usize> = (0..header.len())
            .map(|j| {
                rows.iter()
                    .map(|r| r[j].len())
                    .chain([header[j].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        let line = |cells: &[String], out: &mut String| {
            for (j, cell) in cells.iter().enumerate() {
                if j == 0 {
                    let _ = write!(out, "{:<w$}", cell, w = widths[j]);
                } else {
                    let _ = write!(out, "  {:>w$}", cell, w = widths[j]);
                }
            }
            out.push('\n');
        };
        line(&header, &mut out);
        let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
        out.push_str(&"-".repeat(total));
        out.push('\n');
        let (body, last) = rows.split_at(rows.len() - 1);
        for r in body {
            line(r, &mut out);
        }
        out.push_str(&"-".repeat(total));
        out.push('\n');
        line(&last[0], &mut out);
        out
    }

    /// Machine-readable document: full-precision values, `null` for undefined AP.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Builds a report from detections and image-level scores.
///
/// `classes` fixes the row order. Ground truth is restricted to the images present in
/// `image_scores`, so a document covering one split is scored against that split only.
pub fn evaluate_detections(
    classes: &[String],
    detections: &[Detection],
    image_scores: &[ImageScore],
    gts: &[GroundTruthBox],
    cfg: &EvalConfig,
    ious: &[f64],
) -> Result<EvalReport> {
    cfg.validate()?;
    let images: std::collections::HashSet<&str> =
        image_scores.iter().map(|s| s.image_id.as_str()).collect();
    let mut reports = Vec::with_capacity(classes.len());
    for class in classes {
        let dets: Vec<Detection> = detections
            .iter()
            .filter(|d| d.class_name() == class)
            .cloned()
            .collect();
        let class_gts: Vec<GroundTruthBox> = gts
            .iter()
            .filter(|g| g.class_name == *class && images.contains(g.image_id.as_str()))
            .cloned()
            .collect();
        let ap = ious
            .iter()
            .map(|&t| {
                let c = EvalConfig { eval_iou: t, ..*cfg };
                c.validate()?;
                Ok(average_precision(&dets, &class_gts, &c))
            })
            .collect::<Result<Vec<_>>>()?;
        let (scores, labels): (Vec<f64>, Vec<Label>) = image_scores
            .iter()
            .filter(|s| s.class_name == *class)
            .map(|s| (s.score, s.label))
            .unzip();
        reports.push(ClassReport {
            class_name: class.clone(),
            ap,
            classification_ap: classification_ap(&scores, &labels, cfg.ap_style),
        });
    }
    let mean_ap = (0..ious.len())
        .map(|j| mean_defined(reports.iter().map(|r| r.ap[j])))
        .collect();
    let mean_classification_ap = mean_defined(reports.iter().map(|r| r.classification_ap));
    Ok(EvalReport {
        ious: ious.to_vec(),
        ap_style: cfg.ap_style,
        classes: reports,
        mean_ap,
        mean_classification_ap,
    })
}

/// Runs every scorer over `bags` into detections and image scores.
pub fn run_detection(
    scorers: &[LinearScorer],
    bags: &[FeatureBag],
    cfg: &EvalConfig,
) -> Result<(Vec<Detection>, Vec<ImageScore>)> {
    let mut dets = Vec::new();
    let mut images = Vec::new();
    for scorer in scorers {
        for bag in bags {
            dets.extend(detect(scorer, bag, cfg, scorer.score_fn())?);
        }
        let scores = classification_by_detection(scorer, bags)?;
        for (bag, score) in bags.iter().zip(scores) {
            let label = bag.label(scorer.class_name()).ok_or_else(|| Error::MissingLabel {
                image_id: bag.image_id().to_owned(),
                class: scorer.class_name().to_owned(),
            })?;
            images.push(ImageScore {
                image_id: bag.image_id().to_owned(),
                class_name: scorer.class_name().to_owned(),
                score,
                label,
            });
        }
    }
    Ok((dets, images))
}

/// Detection AP at `cfg.eval_iou` plus any `extra_ious`, and classification-by-detection
/// AP, for every scorer over `bags`.
pub fn evaluate(
    scorers: &[LinearScorer],
    bags: &[FeatureBag],
    gts: &[GroundTruthBox],
    cfg: &EvalConfig,
    extra_ious: &[f64],
) -> Result<EvalReport> {
    let (dets, images) = run_detection(scorers, bags, cfg)?;
    let classes: Vec<String> = scorers.iter().map(|s| s.class_name().to_owned()).collect();
    let mut ious = vec![cfg.eval_iou];
    ious.extend_from_slice(extra_ious);
    evaluate_detections(&classes, &dets, &images, gts, cfg, &ious)
}
