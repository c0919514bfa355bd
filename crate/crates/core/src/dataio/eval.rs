//! Benchmark-protocol average precision and proposal recall.

use serde::{Deserialize, Serialize};

use super::kitti::{Difficulty, GroundTruth, DONT_CARE};
use crate::geometry::{iou_3d, rotated_bev_iou, Box3D};
use crate::nms::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMetric {
    Bev,
    #[default]
    ThreeD,
}

impl ApMetric {
    pub fn iou(&self, a: &Box3D, b: &Box3D) -> f64 {
        match self {
            ApMetric::Bev => rotated_bev_iou(a, b),
            ApMetric::ThreeD => iou_3d(a, b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Recall thresholds `0, 0.1, ..., 1`.
    #[default]
    R11,
    /// Recall thresholds `1/40, 2/40, ..., 1`.
    R40,
}

impl Interpolation {
    pub fn recall_points(&self) -> Vec<f64> {
        match self {
            Interpolation::R11 => (0..=10).map(|i| i as f64 / 10.0).collect(),
            Interpolation::R40 => (1..=40).map(|i| i as f64 / 40.0).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApQuery {
    pub class_id: usize,
    pub iou_threshold: f64,
    pub metric: ApMetric,
    pub interpolation: Interpolation,
}

impl ApQuery {
    /// Car, 3D IoU 0.7, 11-point interpolation.
    pub fn car_3d() -> Self {
        Self {
            class_id: super::kitti::CAR,
            iou_threshold: 0.7,
            metric: ApMetric::ThreeD,
            interpolation: Interpolation::R11,
        }
    }
}

/// AP per difficulty level; `None` when the level has no valid ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ApReport {
    pub easy: Option<f64>,
    pub moderate: Option<f64>,
    pub hard: Option<f64>,
}

impl ApReport {
    pub fn get(&self, d: Difficulty) -> Option<f64> {
        match d {
            Difficulty::Easy => self.easy,
            Difficulty::Moderate => self.moderate,
            Difficulty::Hard => self.hard,
            Difficulty::Ignored => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Tp,
    Fp,
    Ignored,
}

/// Matches one scene's detections (sorted by descending score) against its
/// ground truth at one difficulty level.
fn match_scene(dets: &[&Detection], gts: &[GroundTruth], level: Difficulty, q: &ApQuery) -> (Vec<Outcome>, usize) {
    // A ground truth of the queried class is valid at `level` when it is no
    // harder; harder ones, and DontCare regions, only absorb detections.
    let valid: Vec<bool> = gts
        .iter()
        .map(|g| g.class_id == q.class_id && g.difficulty <= level)
        .collect();
    let absorbing: Vec<bool> = gts
        .iter()
        .zip(&valid)
        .map(|(g, v)| !v && (g.class_id == q.class_id || g.class_id == DONT_CARE))
        .collect();
    let n_valid = valid.iter().filter(|v| **v).count();
    let mut taken = vec![false; gts.len()];
    let outcomes = dets
        .iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                if !valid[j] || taken[j] {
                    continue;
                }
                let iou = q.metric.iou(&d.bbox, &g.bbox);
                if iou >= q.iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            if let Some((j, _)) = best {
                taken[j] = true;
                return Outcome::Tp;
            }
            let absorbed = gts
                .iter()
                .enumerate()
                .any(|(j, g)| absorbing[j] && q.metric.iou(&d.bbox, &g.bbox) >= q.iou_threshold);
            if absorbed {
                Outcome::Ignored
            } else {
                Outcome::Fp
            }
        })
        .collect();
    (outcomes, n_valid)
}

/// Interpolated AP from a ranked list of TP/FP flags.
///
/// Recall points served by the same curve point are summed as one
/// `count * tp / rank` term, which keeps simple fixtures exact.
pub fn interpolated_ap(ranked_tp: &[bool], n_positive: usize, interpolation: Interpolation) -> f64 {
    if n_positive == 0 {
        return 0.0;
    }
    // (tp, rank) per prefix of the ranking
    let mut tp = 0usize;
    let curve: Vec<(usize, usize)> = ranked_tp
        .iter()
        .enumerate()
        .map(|(k, hit)| {
            tp += usize::from(*hit);
            (tp, k + 1)
        })
        .collect();
    let precision = |c: (usize, usize)| c.0 as f64 / c.1 as f64;
    // best[k]: curve index with the highest precision at or after k
    let mut best: Vec<usize> = (0..curve.len()).collect();
    for k in (0..curve.len().saturating_sub(1)).rev() {
        if precision(curve[best[k + 1]]) > precision(curve[k]) {
            best[k] = best[k + 1];
        }
    }
    let points = interpolation.recall_points();
    let mut counts: Vec<usize> = vec![0; curve.len()];
    for &r in &points {
        if let Some(k) = curve.iter().position(|c| c.0 as f64 / n_positive as f64 >= r) {
            counts[best[k]] += 1;
        }
    }
    let sum: f64 = counts
        .iter()
        .zip(&curve)
        .filter(|(n, _)| **n > 0)
        .map(|(n, c)| (n * c.0) as f64 / c.1 as f64)
        .sum();
    sum / points.len() as f64
}

/// AP over a set of scenes. Detections are ranked globally by descending
/// score (ties by scene, then index); each is greedily matched to the
/// best-overlapping unmatched valid ground truth of its class in its scene.
pub fn average_precision(detections: &[Vec<Detection>], ground_truth: &[Vec<GroundTruth>], q: &ApQuery) -> ApReport {
    let mut report = ApReport::default();
    for level in Difficulty::LEVELS {
        let mut ranked: Vec<(f64, bool)> = Vec::new();
        let mut n_pos = 0;
        for (dets, gts) in detections.iter().zip(ground_truth) {
            let mut mine: Vec<&Detection> = dets.iter().filter(|d| d.class_id == q.class_id).collect();
            // stable sort keeps index order among ties
            mine.sort_by(|a, b| b.cls_score.total_cmp(&a.cls_score));
            let (outcomes, n) = match_scene(&mine, gts, level, q);
            n_pos += n;
            for (d, o) in mine.iter().zip(outcomes) {
                if o != Outcome::Ignored {
                    ranked.push((d.cls_score, o == Outcome::Tp));
                }
            }
        }
        // ground truth in scenes without a detection list still counts
        for gts in ground_truth.iter().skip(detections.len()) {
            n_pos += gts
                .iter()
                .filter(|g| g.class_id == q.class_id && g.difficulty <= level)
                .count();
        }
        if n_pos == 0 {
            continue;
        }
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
        let flags: Vec<bool> = ranked.iter().map(|r| r.1).collect();
        let ap = interpolated_ap(&flags, n_pos, q.interpolation);
        match level {
            Difficulty::Easy => report.easy = Some(ap),
            Difficulty::Moderate => report.moderate = Some(ap),
            Difficulty::Hard => report.hard = Some(ap),
            Difficulty::Ignored => {}
        }
    }
    report
}

/// Fraction of ground-truth boxes recovered by the `top_k` highest-scoring
/// proposals of their scene, at BEV rotated IoU `>= threshold`.
///
/// Matching is one-to-one: all (proposal, ground truth) pairs above the
/// threshold are taken greedily by descending IoU. `None` without ground
/// truth.
pub fn proposal_recall(proposals: &[Vec<(Box3D, f64)>], ground_truth: &[Vec<Box3D>], threshold: f64, top_k: usize) -> Option<f64> {
    let total: usize = ground_truth.iter().map(Vec::len).sum();
    if total == 0 {
        return None;
    }
    let matched: usize = proposals
        .iter()
        .zip(ground_truth)
        .map(|(props, gts)| recall_matches(props, gts, threshold, top_k))
        .sum();
    Some(matched as f64 / total as f64)
}

/// Ground truths of one scene matched one-to-one by the top-k proposals.
pub fn recall_matches(props: &[(Box3D, f64)], gts: &[Box3D], threshold: f64, top_k: usize) -> usize {
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| props[b].1.total_cmp(&props[a].1));
    order.truncate(top_k);
    let mut pairs = Vec::new();
    for &p in &order {
        for (g, gt) in gts.iter().enumerate() {
            let iou = rotated_bev_iou(&props[p].0, gt);
            if iou >= threshold {
                pairs.push((iou, p, g));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_p = vec![false; props.len()];
    let mut used_g = vec![false; gts.len()];
    let mut n = 0;
    for (_, p, g) in pairs {
        if !used_p[p] && !used_g[g] {
            used_p[p] = true;
            used_g[g] = true;
            n += 1;
        }
    }
    n
}
