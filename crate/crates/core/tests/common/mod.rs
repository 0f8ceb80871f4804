//! Independent reference implementations and random instance generators shared by the
//! integration tests and the acceptance harness.
#![allow(dead_code)]

use std::collections::BTreeMap;

use mimax::eval::{iou, ApStyle, GroundTruthBox};
use mimax::trainer::ClassCounts;
use mimax::{BoundingBox, Detection, FeatureBag, Label, Region};
use rand::Rng;

pub const CLASS: &str = "c";

pub fn labels(l: Label) -> BTreeMap<String, Label> {
    BTreeMap::from([(CLASS.to_owned(), l)])
}

pub fn unit_box() -> BoundingBox {
    BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap()
}

/// `n` bags of `k` Gaussian regions in `m` dims, positives first then alternating labels.
pub fn random_bags(rng: &mut impl Rng, n: usize, k: usize, m: usize) -> Vec<FeatureBag> {
    (0..n)
        .map(|i| {
            let regions = (0..k)
                .map(|_| {
                    let f = (0..m).map(|_| rng.sample::<f32, _>(rand_distr::StandardNormal)).collect();
                    Region::new(unit_box(), rng.gen::<f32>(), f).unwrap()
                })
                .collect();
            FeatureBag::new(format!("b{i}"), regions, labels(Label::from_bool(i % 2 == 0))).unwrap()
        })
        .collect()
}

pub fn counts(bags: &[FeatureBag]) -> ClassCounts {
    ClassCounts::from_bags(bags, CLASS).unwrap()
}

/// Gap between the best and second-best weighted affine score, minimized over bags.
pub fn argmax_margin(w: &[f64], b: f64, bags: &[FeatureBag], eps: Option<f64>) -> f64 {
    bags.iter()
        .map(|bag| {
            let mut v: Vec<f64> = bag
                .regions()
                .iter()
                .map(|r| {
                    let a: f64 = w.iter().zip(r.feature()).map(|(w, &x)| w * f64::from(x)).sum::<f64>() + b;
                    eps.map_or(a, |e| (f64::from(r.objectness()) + e) * a)
                })
                .collect();
            v.sort_by(|a, b| b.total_cmp(a));
            if v.len() < 2 {
                f64::INFINITY
            } else {
                v[0] - v[1]
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// Central finite differences of `f` at `(w, b)` with step `h`.
pub fn finite_difference(f: impl Fn(&[f64], f64) -> f64, w: &[f64], b: f64, h: f64) -> (Vec<f64>, f64) {
    let mut gw = Vec::with_capacity(w.len());
    let mut probe = w.to_vec();
    for j in 0..w.len() {
        probe[j] = w[j] + h;
        let up = f(&probe, b);
        probe[j] = w[j] - h;
        let down = f(&probe, b);
        probe[j] = w[j];
        gw.push((up - down) / (2.0 * h));
    }
    let gb = (f(w, b + h) - f(w, b - h)) / (2.0 * h);
    (gw, gb)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-8 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// Boxes on a coarse integer grid so overlaps, duplicates and ties are common.
pub fn random_box(rng: &mut impl Rng) -> BoundingBox {
    let x1 = rng.gen_range(0..6) as f32;
    let y1 = rng.gen_range(0..6) as f32;
    let w = rng.gen_range(1..5) as f32;
    let h = rng.gen_range(1..5) as f32;
    BoundingBox::new(x1, y1, x1 + w, y1 + h).unwrap()
}

pub fn random_detections(rng: &mut impl Rng, n: usize, images: usize) -> Vec<Detection> {
    (0..n)
        .map(|_| {
            let img = format!("i{}", rng.gen_range(0..images));
            // few distinct scores so ties occur
            let s = f64::from(rng.gen_range(0..8)) / 8.0;
            Detection::new(img, CLASS, random_box(rng), s).unwrap()
        })
        .collect()
}

pub fn random_ground_truth(rng: &mut impl Rng, n: usize, images: usize) -> Vec<GroundTruthBox> {
    (0..n)
        .map(|_| {
            let img = format!("i{}", rng.gen_range(0..images));
            GroundTruthBox::new(img, CLASS, random_box(rng), rng.gen_bool(0.2))
        })
        .collect()
}

/// O(n^2) NMS: repeatedly take the highest-scoring survivor (earliest on ties) and
/// delete everything overlapping it by more than `thr`.
pub fn nms_reference(dets: &[Detection], thr: f64) -> Vec<Detection> {
    let mut alive: Vec<usize> = (0..dets.len()).collect();
    let mut out = Vec::new();
    while !alive.is_empty() {
        let mut best = 0;
        for (p, &i) in alive.iter().enumerate() {
            if dets[i].score() > dets[alive[best]].score() {
                best = p;
            }
        }
        let top = alive.remove(best);
        alive.retain(|&j| iou(dets[top].bbox(), dets[j].bbox()) <= thr);
        out.push(dets[top].clone());
    }
    out
}

/// Point-by-point AP reference: explicit ranking by selection, matching by scanning all
/// ground truth, then precision and recall recomputed from scratch at every rank.
pub fn ap_reference(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    eval_iou: f64,
    style: ApStyle,
) -> Option<f64> {
    let n_pos = gts.iter().filter(|g| !g.ignore()).count();
    if n_pos == 0 {
        return None;
    }
    let mut remaining: Vec<usize> = (0..dets.len()).collect();
    let mut matched = vec![false; gts.len()];
    let mut hits: Vec<bool> = Vec::new();
    while !remaining.is_empty() {
        let mut best = 0;
        for (p, &i) in remaining.iter().enumerate() {
            if dets[i].score() > dets[remaining[best]].score() {
                best = p;
            }
        }
        let d = &dets[remaining.remove(best)];
        let mut claim: Option<usize> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt.image_id() != d.image_id() || matched[g] {
                continue;
            }
            if claim.map_or(true, |c| iou(d.bbox(), gt.bbox()) > iou(d.bbox(), gts[c].bbox())) {
                claim = Some(g);
            }
        }
        match claim {
            Some(g) if iou(d.bbox(), gts[g].bbox()) >= eval_iou => {
                if !gts[g].ignore() {
                    matched[g] = true;
                    hits.push(true);
                }
            }
            _ => hits.push(false),
        }
    }
    let point = |r: usize| -> (f64, f64) {
        let tp = hits[..=r].iter().filter(|h| **h).count();
        (tp as f64 / (r + 1) as f64, tp as f64 / n_pos as f64)
    };
    let n = hits.len();
    Some(match style {
        ApStyle::ElevenPoint => {
            let mut sum = 0.0;
            for t in 0..=10 {
                let thr = t as f64 / 10.0;
                let mut p_max = 0.0f64;
                for r in 0..n {
                    let (p, rec) = point(r);
                    if rec >= thr {
                        p_max = p_max.max(p);
                    }
                }
                sum += p_max;
            }
            sum / 11.0
        }
        ApStyle::AllPoints => {
            let mut ap = 0.0;
            let mut prev = 0.0;
            for r in 0..n {
                let (_, rec) = point(r);
                if rec != prev {
                    let p_env = (r..n).map(|j| point(j).0).fold(0.0f64, f64::max);
                    ap += (rec - prev) * p_env;
                    prev = rec;
                }
            }
            ap
        }
    })
}
