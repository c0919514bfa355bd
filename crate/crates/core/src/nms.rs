//! Duplicate removal: greedy NMS, Gaussian soft-NMS and the ranking rules
//! that feed them (classification score, predicted IoU, their product, and
//! the ground-truth IoU oracle used for analysis).

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_3d, rotated_bev_iou, Box3D};

/// Soft-NMS drops detections whose decayed score falls below this floor.
pub const SOFT_NMS_SCORE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: Box3D,
    pub cls_score: f64,
    pub predicted_iou: Option<f64>,
    pub class_id: usize,
}

impl Detection {
    pub fn new(bbox: Box3D, cls_score: f64, class_id: usize) -> Self {
        Self {
            bbox,
            cls_score,
            predicted_iou: None,
            class_id,
        }
    }

    pub fn with_predicted_iou(mut self, iou: f64) -> Self {
        self.predicted_iou = Some(iou);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmsStrategy {
    /// Rank by classification score, hard suppression.
    Score,
    /// Rank by classification score, Gaussian score decay.
    Soft,
    /// Rank by classification score times predicted IoU.
    IouGuided,
    /// Rank by predicted IoU alone.
    PredictedIou,
    /// Rank by the best IoU against any ground truth (analysis only).
    Oracle,
}

impl NmsStrategy {
    pub const ALL: [NmsStrategy; 5] = [
        NmsStrategy::Score,
        NmsStrategy::Soft,
        NmsStrategy::IouGuided,
        NmsStrategy::PredictedIou,
        NmsStrategy::Oracle,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            NmsStrategy::Score => "score",
            NmsStrategy::Soft => "soft",
            NmsStrategy::IouGuided => "iou_guided",
            NmsStrategy::PredictedIou => "predicted_iou",
            NmsStrategy::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouMetric {
    #[default]
    BevRotated,
    Full3d,
}

impl IouMetric {
    pub fn iou(&self, a: &Box3D, b: &Box3D) -> f64 {
        match self {
            IouMetric::BevRotated => rotated_bev_iou(a, b),
            IouMetric::Full3d => iou_3d(a, b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmsConfig {
    pub strategy: NmsStrategy,
    pub metric: IouMetric,
    pub threshold: f64,
    pub soft_sigma: f64,
    pub max_keep: usize,
}

impl NmsConfig {
    /// Proposal budget used while training.
    pub const TRAIN_MAX_KEEP: usize = 300;
    /// Proposal budget used at test time.
    pub const TEST_MAX_KEEP: usize = 100;

    pub fn test() -> Self {
        Self {
            strategy: NmsStrategy::Score,
            metric: IouMetric::BevRotated,
            threshold: 0.7,
            soft_sigma: 0.5,
            max_keep: Self::TEST_MAX_KEEP,
        }
    }

    pub fn train() -> Self {
        Self {
            max_keep: Self::TRAIN_MAX_KEEP,
            ..Self::test()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidConfig(format!(
                "nms threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        if !(self.soft_sigma > 0.0) {
            return Err(Error::InvalidConfig("soft-NMS sigma must be positive".into()));
        }
        Ok(())
    }
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self::test()
    }
}

/// Per-detection sorting score under `strategy`.
pub fn rank_scores(
    dets: &[Detection],
    strategy: NmsStrategy,
    gt_boxes: Option<&[Box3D]>,
) -> Result<Vec<f64>> {
    match strategy {
        NmsStrategy::Score | NmsStrategy::Soft => Ok(dets.iter().map(|d| d.cls_score).collect()),
        NmsStrategy::IouGuided => dets
            .iter()
            .enumerate()
            .map(|(index, d)| {
                d.predicted_iou
                    .map(|p| d.cls_score * p)
                    .ok_or(Error::MissingPredictedIou { index })
            })
            .collect(),
        NmsStrategy::PredictedIou => dets
            .iter()
            .enumerate()
            .map(|(index, d)| d.predicted_iou.ok_or(Error::MissingPredictedIou { index }))
            .collect(),
        NmsStrategy::Oracle => {
            let gts = gt_boxes.ok_or(Error::MissingGroundTruth)?;
            Ok(dets
                .iter()
                .map(|d| gts.iter().map(|g| iou_3d(&d.bbox, g)).fold(0.0, f64::max))
                .collect())
        }
    }
}

/// Indices sorted by (score descending, index ascending).
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Greedy suppression over an arbitrary pairwise overlap. Returns kept
/// indices in rank order.
pub fn greedy_suppress<F>(scores: &[f64], threshold: f64, max_keep: usize, overlap: F) -> Vec<usize>
where
    F: Fn(usize, usize) -> f64,
{
    let mut kept: Vec<usize> = Vec::new();
    for i in rank_order(scores) {
        if kept.len() >= max_keep {
            break;
        }
        if kept.iter().all(|&k| overlap(k, i) <= threshold) {
            kept.push(i);
        }
    }
    kept
}

/// Hard NMS. Returns the indices of kept detections in rank order.
pub fn nms(dets: &[Detection], scores: &[f64], config: &NmsConfig) -> Result<Vec<usize>> {
    if scores.len() != dets.len() {
        return Err(Error::LengthMismatch {
            expected: dets.len(),
            actual: scores.len(),
        });
    }
    Ok(greedy_suppress(scores, config.threshold, config.max_keep, |a, b| {
        config.metric.iou(&dets[a].bbox, &dets[b].bbox)
    }))
}

/// Gaussian soft-NMS: each selection decays the remaining scores by
/// `exp(-iou² / σ)`. Returns `(index, rescored)` pairs in selection order.
pub fn soft_nms(dets: &[Detection], scores: &[f64], config: &NmsConfig) -> Result<Vec<(usize, f64)>> {
    if scores.len() != dets.len() {
        return Err(Error::LengthMismatch {
            expected: dets.len(),
            actual: scores.len(),
        });
    }
    if !(config.soft_sigma > 0.0) {
        return Err(Error::InvalidConfig("soft-NMS sigma must be positive".into()));
    }
    let mut live: Vec<(usize, f64)> = scores
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, s)| *s >= SOFT_NMS_SCORE_FLOOR)
        .collect();
    let mut out = Vec::new();
    while !live.is_empty() && out.len() < config.max_keep {
        let best = live
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| {
                a.1.partial_cmp(&b.1)
                    .unwrap_or(Ordering::Equal)
                    .then(b.0.cmp(&a.0))
            })
            .map(|(pos, _)| pos)
            .unwrap();
        let (top, top_score) = live.swap_remove(best);
        out.push((top, top_score));
        for entry in live.iter_mut() {
            let iou = config.metric.iou(&dets[top].bbox, &dets[entry.0].bbox);
            if iou > 0.0 {
                entry.1 *= (-iou * iou / config.soft_sigma).exp();
            }
        }
        live.retain(|(_, s)| *s >= SOFT_NMS_SCORE_FLOOR);
    }
    Ok(out)
}

/// Ranks, suppresses, and returns `(detection index, final score)` pairs in
/// output order. The final score is the ranking score (decayed for soft-NMS).
pub fn run_nms(
    dets: &[Detection],
    config: &NmsConfig,
    gt_boxes: Option<&[Box3D]>,
) -> Result<Vec<(usize, f64)>> {
    config.validate()?;
    let scores = rank_scores(dets, config.strategy, gt_boxes)?;
    if config.strategy == NmsStrategy::Soft {
        soft_nms(dets, &scores, config)
    } else {
        Ok(nms(dets, &scores, config)?
            .into_iter()
            .map(|i| (i, scores[i]))
            .collect())
    }
}
