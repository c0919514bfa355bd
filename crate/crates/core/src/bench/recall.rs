//! Proposal recall under different anchor receptive fields.
//!
//! The learned parts of the proposal stage are replaced by two synthetic
//! stand-ins: a segmentation score from [`SurfaceDistanceScore`] and a box
//! regressor whose error grows as the anchor's receptive field sees less of
//! the object it sits on. Noise draws are keyed by (point, orientation slot)
//! so every mode is compared under common random numbers.

use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::{
    distance_to_box, filter_anchors, score_anchors, seed_anchors, seed_cuboid_anchors, Anchor, AnchorFilterConfig, ClassConfig,
    ReceptiveField, SurfaceDistanceScore,
};
use crate::dataio::eval::recall_matches;
use crate::dataio::SceneSample;
use crate::error::Result;
use crate::geometry::{rotated_bev_iou, Box3D};
use crate::nms::greedy_suppress;
use crate::rng::{derive_seed, hash_unit};
use crate::spatial::PointGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMode {
    Sphere,
    /// Reference cuboid at yaw 0 only.
    CuboidSingle,
    /// Reference cuboids at yaw 0 and π/2.
    CuboidPair,
}

impl AnchorMode {
    pub const ALL: [AnchorMode; 3] = [AnchorMode::Sphere, AnchorMode::CuboidSingle, AnchorMode::CuboidPair];

    pub fn name(&self) -> &'static str {
        match self {
            AnchorMode::Sphere => "sphere",
            AnchorMode::CuboidSingle => "cuboid_1",
            AnchorMode::CuboidPair => "cuboid_2",
        }
    }

    pub fn seed(&self, scene: &SceneSample, class: &ClassConfig) -> Vec<Anchor> {
        match self {
            AnchorMode::Sphere => seed_anchors(&scene.cloud, class),
            AnchorMode::CuboidSingle => seed_cuboid_anchors(&scene.cloud, class, &[0.0]),
            AnchorMode::CuboidPair => seed_cuboid_anchors(&scene.cloud, class, &[0.0, FRAC_PI_2]),
        }
    }
}

/// Error scales of the synthetic regressor. The standard deviation of each
/// residual is `sigma * (floor + 1 - coverage)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressorConfig {
    pub center_sigma: f64,
    /// Log-scale size error.
    pub size_sigma: f64,
    pub yaw_sigma: f64,
    pub floor: f64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            center_sigma: 0.3,
            size_sigma: 0.08,
            yaw_sigma: 0.25,
            floor: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecallConfig {
    pub class: ClassConfig,
    pub anchor_filter: AnchorFilterConfig,
    pub regressor: RegressorConfig,
    /// Amplitude of the hash jitter added to segmentation scores.
    pub score_jitter: f64,
    /// BEV IoU threshold of the NMS run over decoded proposals.
    pub proposal_nms_threshold: f64,
    pub top_k: usize,
    pub iou_threshold: f64,
}

impl Default for RecallConfig {
    fn default() -> Self {
        Self {
            class: ClassConfig::car(),
            anchor_filter: AnchorFilterConfig {
                max_keep: 500,
                ..AnchorFilterConfig::default()
            },
            regressor: RegressorConfig::default(),
            score_jitter: 0.2,
            proposal_nms_threshold: 0.7,
            top_k: 100,
            iou_threshold: 0.7,
        }
    }
}

/// Deterministic standard normal keyed by `(seed, a, b)`.
fn hash_normal(seed: u64, a: u64, b: u64) -> f64 {
    let key = derive_seed(a, b);
    let u1 = hash_unit(seed, key).max(f64::MIN_POSITIVE);
    let u2 = hash_unit(seed, key ^ 0x5555_5555_5555_5555);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

fn sorted_intersection(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Output of the proposal stage for one scene and mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalSet {
    pub anchors: usize,
    pub kept_anchors: usize,
    /// `(box, score)` after proposal NMS, best first.
    pub proposals: Vec<(Box3D, f64)>,
}

/// Seeds, scores, filters and regresses anchors, then suppresses the decoded
/// proposals.
pub fn generate_proposals(scene: &SceneSample, mode: AnchorMode, config: &RecallConfig, seed: u64) -> Result<ProposalSet> {
    config.class.validate()?;
    let gts: Vec<Box3D> = scene
        .ground_truth
        .iter()
        .filter(|g| g.class_id == config.class.class_id)
        .map(|g| g.bbox)
        .collect();
    let grid = PointGrid::new(&scene.cloud, 2.0);
    let gt_sets: Vec<Vec<usize>> = gts.iter().map(|g| grid.in_box(g)).collect();
    let provider = SurfaceDistanceScore {
        jitter: config.score_jitter,
        seed: derive_seed(seed, 1),
        ..SurfaceDistanceScore::new(gts.clone())
    };
    // anchors seeded within the score margin of an object regress to it
    let mut owner = vec![None; scene.cloud.len()];
    for (g, b) in gts.iter().enumerate().rev() {
        let m = provider.margin;
        let grown = Box3D {
            l: b.l + 2.0 * m,
            w: b.w + 2.0 * m,
            h: b.h + 2.0 * m,
            ..*b
        };
        for i in grid.in_box(&grown) {
            if distance_to_box(scene.cloud.points[i].pos(), b) <= m {
                owner[i] = Some(g);
            }
        }
    }

    let mut anchors = mode.seed(scene, &config.class);
    score_anchors(&mut anchors, &scene.cloud, &provider);
    let scores: Vec<f64> = anchors.iter().map(|a| a.score).collect();
    let kept = filter_anchors(&anchors, &scores, &config.anchor_filter)?;

    let noise_seed = derive_seed(seed, 2);
    let r = &config.regressor;
    let mut proposals: Vec<(Box3D, f64)> = kept
        .iter()
        .map(|a| {
            let slot = match a.field {
                ReceptiveField::Cuboid { yaw } if yaw != 0.0 => 1,
                _ => 0,
            };
            let key = a.point_index as u64;
            let z = |k: u64| hash_normal(noise_seed, key, 8 * slot + k);
            let b = match owner[a.point_index] {
                Some(g) => {
                    let field = a.interior(&grid);
                    let coverage = sorted_intersection(&field, &gt_sets[g]) as f64 / gt_sets[g].len() as f64;
                    let s = r.floor + 1.0 - coverage;
                    let t = &gts[g];
                    Box3D::new_unchecked(
                        [
                            t.cx + r.center_sigma * s * z(0),
                            t.cy + r.center_sigma * s * z(1),
                            t.cz + 0.3 * r.center_sigma * s * z(2),
                        ],
                        [
                            t.l * (r.size_sigma * s * z(3)).exp(),
                            t.w * (r.size_sigma * s * z(4)).exp(),
                            t.h * (r.size_sigma * s * z(5)).exp(),
                        ],
                        t.yaw + r.yaw_sigma * s * z(6),
                    )
                }
                None => Box3D::new_unchecked(
                    a.center.pos(),
                    a.reference_size,
                    -PI + 2.0 * PI * hash_unit(noise_seed, derive_seed(key, 8 * slot + 7)),
                ),
            };
            (b, a.score)
        })
        .collect();
    let scores: Vec<f64> = proposals.iter().map(|p| p.1).collect();
    let keep = greedy_suppress(&scores, config.proposal_nms_threshold, config.top_k, |a, b| {
        rotated_bev_iou(&proposals[a].0, &proposals[b].0)
    });
    proposals = keep.into_iter().map(|i| proposals[i]).collect();
    Ok(ProposalSet {
        anchors: anchors.len(),
        kept_anchors: kept.len(),
        proposals,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRecall {
    pub mode: AnchorMode,
    /// Anchors seeded over all scenes, before filtering.
    pub anchors: usize,
    pub kept_anchors: usize,
    pub proposals: usize,
    pub ground_truth: usize,
    pub matched: usize,
    pub recall: Option<f64>,
}

/// Recall of every anchor mode over `scenes`. Scenes run in parallel on the
/// current rayon pool; results are reduced in scene order.
pub fn recall_comparison(scenes: &[SceneSample], config: &RecallConfig, seed: u64) -> Result<Vec<ModeRecall>> {
    AnchorMode::ALL
        .iter()
        .map(|&mode| {
            let per_scene: Vec<(ProposalSet, usize, usize)> = scenes
                .par_iter()
                .enumerate()
                .map(|(k, scene)| {
                    let set = generate_proposals(scene, mode, config, derive_seed(seed, k as u64))?;
                    let gts: Vec<Box3D> = scene
                        .ground_truth
                        .iter()
                        .filter(|g| g.class_id == config.class.class_id)
                        .map(|g| g.bbox)
                        .collect();
                    let matched = recall_matches(&set.proposals, &gts, config.iou_threshold, config.top_k);
                    Ok((set, gts.len(), matched))
                })
                .collect::<Result<_>>()?;
            let ground_truth: usize = per_scene.iter().map(|p| p.1).sum();
            let matched: usize = per_scene.iter().map(|p| p.2).sum();
            Ok(ModeRecall {
                mode,
                anchors: per_scene.iter().map(|p| p.0.anchors).sum(),
                kept_anchors: per_scene.iter().map(|p| p.0.kept_anchors).sum(),
                proposals: per_scene.iter().map(|p| p.0.proposals.len()).sum(),
                ground_truth,
                matched,
                recall: (ground_truth > 0).then(|| matched as f64 / ground_truth as f64),
            })
        })
        .collect()
}
