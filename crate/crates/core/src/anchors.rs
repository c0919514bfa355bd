//! Per-point anchors, PointsIoU label assignment, anchor filtering and the
//! proposal regression / angle-bin target encoding.
//!
//! Every cloud point seeds exactly one spherical anchor. An anchor carries a
//! class-specific receptive-field radius and an orientation-free reference
//! size; the proposal orientation is predicted through angle bins instead of
//! being enumerated, so the anchor count does not grow with the number of
//! orientations.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{disk_iou, iou_3d, normalize_angle, point_in_box, Box3D, Point3, PointCloud};
use crate::nms::greedy_suppress;
use crate::spatial::PointGrid;

/// Minimum decoded box extent, in meters.
pub const MIN_DECODED_SIZE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassConfig {
    pub class_id: usize,
    pub name: String,
    pub radius: f64,
    /// Reference `(l, w, h)`.
    pub reference_size: [f64; 3],
    pub angle_bins: usize,
    /// An anchor is positive when its best PointsIoU exceeds this.
    pub points_iou_threshold: f64,
    /// Second-stage proposals above this 3D IoU are positive.
    pub proposal_positive_iou: f64,
    /// Second-stage proposals below this 3D IoU are negative.
    pub proposal_negative_iou: f64,
}

impl ClassConfig {
    pub fn car() -> Self {
        Self {
            class_id: 1,
            name: "Car".into(),
            radius: 2.0,
            reference_size: [3.9, 1.6, 1.6],
            angle_bins: 12,
            points_iou_threshold: 0.55,
            proposal_positive_iou: 0.55,
            proposal_negative_iou: 0.45,
        }
    }

    pub fn pedestrian() -> Self {
        Self {
            class_id: 2,
            name: "Pedestrian".into(),
            radius: 1.0,
            reference_size: [0.8, 0.8, 1.6],
            angle_bins: 12,
            points_iou_threshold: 0.55,
            proposal_positive_iou: 0.5,
            proposal_negative_iou: 0.4,
        }
    }

    pub fn cyclist() -> Self {
        Self {
            class_id: 3,
            name: "Cyclist".into(),
            radius: 1.0,
            reference_size: [1.6, 0.8, 1.6],
            angle_bins: 12,
            points_iou_threshold: 0.55,
            proposal_positive_iou: 0.5,
            proposal_negative_iou: 0.4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::InvalidConfig(format!("radius {} must be positive", self.radius)));
        }
        if self.reference_size.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidConfig("reference sizes must be positive".into()));
        }
        if self.angle_bins < 2 {
            return Err(Error::InvalidConfig("need at least 2 angle bins".into()));
        }
        if !(self.points_iou_threshold > 0.0 && self.points_iou_threshold < 1.0) {
            return Err(Error::InvalidConfig("PointsIoU threshold must be in (0, 1)".into()));
        }
        if self.proposal_negative_iou > self.proposal_positive_iou {
            return Err(Error::InvalidConfig(
                "negative proposal IoU threshold exceeds positive threshold".into(),
            ));
        }
        Ok(())
    }
}

impl Default for ClassConfig {
    fn default() -> Self {
        Self::car()
    }
}

/// The region whose interior points an anchor looks at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReceptiveField {
    Sphere { radius: f64 },
    /// Reference-size cuboid at a fixed orientation, for comparison runs.
    Cuboid { yaw: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    /// Index of the seeding point in the cloud.
    pub point_index: usize,
    pub center: Point3,
    pub field: ReceptiveField,
    pub reference_size: [f64; 3],
    pub class_id: usize,
    pub score: f64,
}

pub type SphericalAnchor = Anchor;

impl Anchor {
    /// Reference box at the anchor center. Spherical anchors have no
    /// orientation and use yaw 0.
    pub fn reference_box(&self) -> Box3D {
        let yaw = match self.field {
            ReceptiveField::Sphere { .. } => 0.0,
            ReceptiveField::Cuboid { yaw } => yaw,
        };
        Box3D::new_unchecked(self.center.pos(), self.reference_size, yaw)
    }

    /// Ascending indices of cloud points inside the receptive field.
    pub fn interior(&self, grid: &PointGrid<'_>) -> Vec<usize> {
        match self.field {
            ReceptiveField::Sphere { radius } => grid.in_sphere(&self.center, radius),
            ReceptiveField::Cuboid { .. } => grid.in_box(&self.reference_box()),
        }
    }
}

/// One spherical anchor per cloud point, in cloud order.
pub fn seed_anchors(cloud: &PointCloud, config: &ClassConfig) -> Vec<Anchor> {
    cloud
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| Anchor {
            point_index: i,
            center: *p,
            field: ReceptiveField::Sphere {
                radius: config.radius,
            },
            reference_size: config.reference_size,
            class_id: config.class_id,
            score: 0.0,
        })
        .collect()
}

/// Conventional cuboid anchors: one per (point, orientation), point-major.
pub fn seed_cuboid_anchors(cloud: &PointCloud, config: &ClassConfig, orientations: &[f64]) -> Vec<Anchor> {
    cloud
        .points
        .iter()
        .enumerate()
        .flat_map(|(i, p)| {
            orientations.iter().map(move |&yaw| Anchor {
                point_index: i,
                center: *p,
                field: ReceptiveField::Cuboid { yaw },
                reference_size: config.reference_size,
                class_id: config.class_id,
                score: 0.0,
            })
        })
        .collect()
}

/// Per-point foreground score in `[0, 1]`. Stands in for a segmentation
/// network; implementations must be pure functions of their inputs.
pub trait ScoreProvider: Sync {
    fn score(&self, cloud: &PointCloud, index: usize) -> f64;
}

pub struct ConstantScore(pub f64);

impl ScoreProvider for ConstantScore {
    fn score(&self, _cloud: &PointCloud, _index: usize) -> f64 {
        self.0
    }
}

/// Sigmoid of the signed margin between a point and the nearest ground-truth
/// box surface, with optional hash-keyed jitter.
#[derive(Debug, Clone)]
pub struct SurfaceDistanceScore {
    pub boxes: Vec<Box3D>,
    /// Distance (m) at which the score crosses 0.5.
    pub margin: f64,
    pub temperature: f64,
    pub jitter: f64,
    pub seed: u64,
}

impl SurfaceDistanceScore {
    pub fn new(boxes: Vec<Box3D>) -> Self {
        Self {
            boxes,
            margin: 0.3,
            temperature: 0.1,
            jitter: 0.0,
            seed: 0,
        }
    }
}

/// Euclidean distance from `p` to the closed box (0 inside).
pub fn distance_to_box(p: [f64; 3], b: &Box3D) -> f64 {
    let local = crate::geometry::to_box_frame(p, b);
    let half = [0.5 * b.l, 0.5 * b.w, 0.5 * b.h];
    let mut acc = 0.0;
    for k in 0..3 {
        let d = (local[k].abs() - half[k]).max(0.0);
        acc += d * d;
    }
    acc.sqrt()
}

impl ScoreProvider for SurfaceDistanceScore {
    fn score(&self, cloud: &PointCloud, index: usize) -> f64 {
        let p = cloud.points[index].pos();
        let d = self
            .boxes
            .iter()
            .map(|b| distance_to_box(p, b))
            .fold(f64::INFINITY, f64::min);
        let base = if d.is_finite() {
            1.0 / (1.0 + ((d - self.margin) / self.temperature).exp())
        } else {
            0.0
        };
        let noise = self.jitter * (crate::rng::hash_unit(self.seed, index as u64) - 0.5);
        (base + noise).clamp(0.0, 1.0)
    }
}

/// Writes each anchor's score from its seeding point.
pub fn score_anchors(anchors: &mut [Anchor], cloud: &PointCloud, provider: &dyn ScoreProvider) {
    for a in anchors.iter_mut() {
        a.score = provider.score(cloud, a.point_index);
    }
}

/// `|A ∩ B| / |A ∪ B|` over point-index sets; 0 for an empty union.
///
/// Inputs are treated as sets; duplicates are ignored.
pub fn points_iou(a: &[usize], b: &[usize]) -> f64 {
    let sorted_unique = |s: &[usize]| s.windows(2).all(|w| w[0] < w[1]);
    let (a, b) = if sorted_unique(a) && sorted_unique(b) {
        (std::borrow::Cow::Borrowed(a), std::borrow::Cow::Borrowed(b))
    } else {
        let mut x = a.to_vec();
        x.sort_unstable();
        x.dedup();
        let mut y = b.to_vec();
        y.sort_unstable();
        y.dedup();
        (std::borrow::Cow::Owned(x), std::borrow::Cow::Owned(y))
    };
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorLabel {
    pub label: Label,
    /// Best-matching ground truth (lowest index on ties). Always set when
    /// any ground truth exists.
    pub matched_gt: Option<usize>,
    pub points_iou: f64,
}

impl AnchorLabel {
    pub fn is_positive(&self) -> bool {
        self.label == Label::Positive
    }
}

/// PointsIoU labels: positive iff the best PointsIoU against any ground
/// truth is strictly above `threshold`.
pub fn assign_labels(anchors: &[Anchor], gt_boxes: &[Box3D], cloud: &PointCloud, threshold: f64) -> Vec<AnchorLabel> {
    let grid = PointGrid::new(cloud, 2.0);
    let gt_sets: Vec<Vec<usize>> = gt_boxes.iter().map(|b| grid.in_box(b)).collect();
    assign_labels_with(anchors, gt_boxes, &gt_sets, &grid, threshold)
}

pub(crate) fn assign_labels_with(
    anchors: &[Anchor],
    gt_boxes: &[Box3D],
    gt_sets: &[Vec<usize>],
    grid: &PointGrid<'_>,
    threshold: f64,
) -> Vec<AnchorLabel> {
    anchors
        .par_iter()
        .map(|anchor| {
            if gt_boxes.is_empty() {
                return AnchorLabel {
                    label: Label::Negative,
                    matched_gt: None,
                    points_iou: 0.0,
                };
            }
            let region = anchor.interior(grid);
            let mut best = (0usize, f64::NEG_INFINITY);
            for (g, set) in gt_sets.iter().enumerate() {
                let v = points_iou(&region, set);
                if v > best.1 {
                    best = (g, v);
                }
            }
            AnchorLabel {
                label: if best.1 > threshold {
                    Label::Positive
                } else {
                    Label::Negative
                },
                matched_gt: Some(best.0),
                points_iou: best.1,
            }
        })
        .collect()
}

/// BEV footprint used when suppressing anchors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorFootprint {
    /// Axis-aligned reference rectangle (or the cuboid's own orientation).
    #[default]
    ReferenceRect,
    /// The receptive sphere's disk.
    Disk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorFilterConfig {
    pub bev_iou_threshold: f64,
    pub max_keep: usize,
    pub footprint: AnchorFootprint,
}

impl Default for AnchorFilterConfig {
    fn default() -> Self {
        Self {
            bev_iou_threshold: 0.7,
            max_keep: 16_384,
            footprint: AnchorFootprint::ReferenceRect,
        }
    }
}

/// Greedy NMS over anchor footprints by descending score (ties by index).
/// `scores` overrides the anchors' stored scores; survivors carry them.
pub fn filter_anchors(anchors: &[Anchor], scores: &[f64], config: &AnchorFilterConfig) -> Result<Vec<Anchor>> {
    if scores.len() != anchors.len() {
        return Err(Error::LengthMismatch {
            expected: anchors.len(),
            actual: scores.len(),
        });
    }
    let boxes: Vec<Box3D> = anchors.iter().map(Anchor::reference_box).collect();
    let kept = match config.footprint {
        AnchorFootprint::ReferenceRect => {
            greedy_suppress(scores, config.bev_iou_threshold, config.max_keep, |a, b| {
                crate::geometry::rotated_bev_iou(&boxes[a], &boxes[b])
            })
        }
        AnchorFootprint::Disk => {
            greedy_suppress(scores, config.bev_iou_threshold, config.max_keep, |a, b| {
                let r = |x: &Anchor| match x.field {
                    ReceptiveField::Sphere { radius } => radius,
                    ReceptiveField::Cuboid { .. } => {
                        0.5 * (x.reference_size[0].powi(2) + x.reference_size[1].powi(2)).sqrt()
                    }
                };
                let (x, y) = (&anchors[a], &anchors[b]);
                disk_iou([x.center.x, x.center.y], r(x), [y.center.x, y.center.y], r(y))
            })
        }
    };
    Ok(kept
        .into_iter()
        .map(|i| Anchor {
            score: scores[i],
            ..anchors[i]
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalTarget {
    /// `G - A` per axis, meters.
    pub center: [f64; 3],
    /// `(G - A) / A` per axis.
    pub size: [f64; 3],
    pub angle_bin: usize,
    /// Radians from the bin center.
    pub angle_residual: f64,
}

fn bin_width(bins: usize) -> f64 {
    2.0 * PI / bins as f64
}

/// Center of angle bin `bin`: `-π + (bin + 0.5)·2π/bins`.
pub fn bin_center(bin: usize, bins: usize) -> f64 {
    -PI + (bin as f64 + 0.5) * bin_width(bins)
}

/// Splits a yaw into `(bin, residual)` over `bins` equal arcs of `(-π, π]`.
pub fn encode_angle(yaw: f64, bins: usize) -> (usize, f64) {
    assert!(bins >= 2, "need at least 2 angle bins");
    let y = normalize_angle(yaw);
    let bin = (((y + PI) / bin_width(bins)).floor() as usize).min(bins - 1);
    (bin, y - bin_center(bin, bins))
}

pub fn decode_angle(bin: usize, residual: f64, bins: usize) -> Result<f64> {
    if bin >= bins {
        return Err(Error::BinOutOfRange { bin, bins });
    }
    Ok(normalize_angle(bin_center(bin, bins) + residual))
}

/// Regression targets of `gt` relative to a reference center and size.
pub fn encode_box_targets(center: [f64; 3], size: [f64; 3], gt: &Box3D, bins: usize) -> Result<ProposalTarget> {
    if [gt.cx, gt.cy, gt.cz, gt.l, gt.w, gt.h, gt.yaw].iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ground-truth box"));
    }
    let g = gt.center();
    let gs = gt.size();
    let (angle_bin, angle_residual) = encode_angle(gt.yaw, bins);
    Ok(ProposalTarget {
        center: [g[0] - center[0], g[1] - center[1], g[2] - center[2]],
        size: [
            (gs[0] - size[0]) / size[0],
            (gs[1] - size[1]) / size[1],
            (gs[2] - size[2]) / size[2],
        ],
        angle_bin,
        angle_residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decoded {
    pub bbox: Box3D,
    /// Set when a decoded size was non-positive and got clamped.
    pub clamped: bool,
}

pub fn decode_box_targets(center: [f64; 3], size: [f64; 3], target: &ProposalTarget, bins: usize) -> Result<Decoded> {
    let yaw = decode_angle(target.angle_bin, target.angle_residual, bins)?;
    let mut clamped = false;
    let mut out = [0.0; 3];
    for k in 0..3 {
        let s = size[k] + target.size[k] * size[k];
        out[k] = if s <= 0.0 {
            clamped = true;
            MIN_DECODED_SIZE
        } else {
            s
        };
    }
    Ok(Decoded {
        bbox: Box3D::new_unchecked(
            [
                center[0] + target.center[0],
                center[1] + target.center[1],
                center[2] + target.center[2],
            ],
            out,
            yaw,
        ),
        clamped,
    })
}

pub fn encode_targets(anchor: &Anchor, gt: &Box3D, bins: usize) -> Result<ProposalTarget> {
    encode_box_targets(anchor.center.pos(), anchor.reference_size, gt, bins)
}

pub fn decode_targets(anchor: &Anchor, target: &ProposalTarget, bins: usize) -> Result<Decoded> {
    decode_box_targets(anchor.center.pos(), anchor.reference_size, target, bins)
}

/// Second-stage training label of a proposal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ProposalAssignment {
    Positive { gt: usize, iou: f64 },
    Negative { iou: f64 },
    /// Between the thresholds; excluded from the loss.
    Ignored { iou: f64 },
}

/// Labels proposals by their best 3D IoU against the ground truths.
pub fn assign_proposals(proposals: &[Box3D], gt_boxes: &[Box3D], config: &ClassConfig) -> Vec<ProposalAssignment> {
    proposals
        .iter()
        .map(|p| {
            let mut best = (0usize, 0.0f64);
            for (g, gt) in gt_boxes.iter().enumerate() {
                let v = iou_3d(p, gt);
                if v > best.1 {
                    best = (g, v);
                }
            }
            if best.1 > config.proposal_positive_iou {
                ProposalAssignment::Positive {
                    gt: best.0,
                    iou: best.1,
                }
            } else if best.1 < config.proposal_negative_iou {
                ProposalAssignment::Negative { iou: best.1 }
            } else {
                ProposalAssignment::Ignored { iou: best.1 }
            }
        })
        .collect()
}

/// True when the point lies in any of the boxes.
pub fn in_any_box(p: [f64; 3], boxes: &[Box3D]) -> bool {
    boxes.iter().any(|b| point_in_box(p, b))
}
