//! Synthetic second-stage detections for comparing NMS ranking rules.
//!
//! Every ground-truth object receives a cluster of perturbed duplicates.
//! Classification scores are only weakly tied to localization quality;
//! predicted IoU is the true IoU plus bounded noise. Background detections
//! away from any object carry low classification scores but a predicted IoU
//! that says nothing, as an IoU branch trained only on positives would.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::eval::{average_precision, ApQuery, ApReport};
use crate::dataio::kitti::GroundTruth;
use crate::dataio::synth::{synth_scene, SynthConfig};
use crate::dataio::SceneSample;
use crate::error::{Error, Result};
use crate::geometry::{bev_intersection_area, iou_3d, Box3D};
use crate::nms::{run_nms, Detection, IouMetric, NmsConfig, NmsStrategy};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionNoise {
    /// Duplicates per object, inclusive range.
    pub duplicates: [usize; 2],
    /// Center error at full perturbation strength, meters.
    pub center_sigma: f64,
    pub size_sigma: f64,
    pub yaw_sigma: f64,
    /// Weight of the true IoU in the object classification score.
    pub cls_iou_weight: f64,
    /// Half-width of the uniform classification noise.
    pub cls_noise: f64,
    /// Half-width of the uniform noise added to the true IoU.
    pub predicted_iou_noise: f64,
    pub background: usize,
    pub background_cls: [f64; 2],
    pub background_predicted_iou: [f64; 2],
}

impl Default for DetectionNoise {
    fn default() -> Self {
        Self {
            duplicates: [3, 8],
            center_sigma: 0.5,
            size_sigma: 0.08,
            yaw_sigma: 0.15,
            cls_iou_weight: 0.1,
            cls_noise: 0.15,
            predicted_iou_noise: 0.1,
            background: 15,
            background_cls: [0.05, 0.45],
            background_predicted_iou: [0.5, 1.0],
        }
    }
}

/// Object detections for one scene. `constant_cls` replaces every
/// classification score with 1 and `exact_iou` makes the predicted IoU the
/// true one; both exist for the equality checks.
pub fn synth_detections(gts: &[GroundTruth], noise: &DetectionNoise, seed: u64, constant_cls: bool, exact_iou: bool) -> Result<Vec<Detection>> {
    let mut rng = seeded(seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = Vec::new();
    let [lo, hi] = noise.duplicates;
    if lo > hi {
        return Err(Error::InvalidConfig("duplicate range must be ordered".into()));
    }
    for g in gts {
        let b = g.bbox;
        for _ in 0..rng.random_range(lo..=hi) {
            let strength: f64 = rng.random_range(0.1..1.0);
            let z: [f64; 6] = std::array::from_fn(|_| std.sample(&mut rng));
            let d = Box3D::new_unchecked(
                [
                    b.cx + noise.center_sigma * strength * z[0],
                    b.cy + noise.center_sigma * strength * z[1],
                    b.cz + 0.3 * noise.center_sigma * strength * z[2],
                ],
                [
                    b.l * (noise.size_sigma * strength * z[3]).exp(),
                    b.w * (noise.size_sigma * strength * z[4]).exp(),
                    b.h,
                ],
                b.yaw + noise.yaw_sigma * strength * z[5],
            );
            let iou = iou_3d(&d, &b);
            let cls = 0.65 + noise.cls_iou_weight * iou + rng.random_range(-noise.cls_noise..=noise.cls_noise);
            let pred = iou + rng.random_range(-noise.predicted_iou_noise..=noise.predicted_iou_noise);
            out.push(
                Detection::new(d, if constant_cls { 1.0 } else { cls.clamp(0.0, 1.0) }, g.class_id)
                    .with_predicted_iou(if exact_iou { iou } else { pred.clamp(0.0, 1.0) }),
            );
        }
    }
    Ok(out)
}

/// Background detections placed clear of every object in BEV.
pub fn synth_background(gts: &[GroundTruth], noise: &DetectionNoise, extent: &SynthConfig, class_id: usize, seed: u64) -> Vec<Detection> {
    let mut rng = seeded(seed);
    let size = crate::dataio::synth::mean_size(class_id);
    let mut out = Vec::new();
    let mut attempts = 0;
    while out.len() < noise.background && attempts < 100 * noise.background.max(1) {
        attempts += 1;
        let b = Box3D::new_unchecked(
            [
                rng.random_range(extent.x_range[0]..extent.x_range[1]),
                rng.random_range(extent.y_range[0]..extent.y_range[1]),
                extent.ground_z + 0.5 * size[2],
            ],
            size,
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        );
        if gts.iter().any(|g| bev_intersection_area(&b, &g.bbox) > 0.0) {
            continue;
        }
        let [c0, c1] = noise.background_cls;
        let [p0, p1] = noise.background_predicted_iou;
        out.push(Detection::new(b, rng.random_range(c0..=c1), class_id).with_predicted_iou(rng.random_range(p0..=p1)));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionBenchConfig {
    pub scene: SynthConfig,
    pub noise: DetectionNoise,
    /// Threshold and metric of the final NMS; the strategy is varied.
    pub nms: NmsConfig,
    pub query: ApQuery,
}

impl Default for DetectionBenchConfig {
    fn default() -> Self {
        Self {
            scene: SynthConfig {
                objects: 12,
                ground_points: 500,
                clutter_points: 200,
                ..SynthConfig::default()
            },
            noise: DetectionNoise::default(),
            nms: NmsConfig {
                threshold: 0.1,
                metric: IouMetric::BevRotated,
                ..NmsConfig::test()
            },
            query: ApQuery::car_3d(),
        }
    }
}

/// One generated evaluation set: a scene and its raw detections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub seed: u64,
    pub scene: SceneSample,
    pub detections: Vec<Detection>,
}

pub fn generate_set(config: &DetectionBenchConfig, seed: u64) -> Result<DetectionSet> {
    let scene = synth_scene(&config.scene, &format!("{seed:06}"), derive_seed(seed, 0))?;
    let mut detections = synth_detections(&scene.ground_truth, &config.noise, derive_seed(seed, 1), false, false)?;
    detections.extend(synth_background(
        &scene.ground_truth,
        &config.noise,
        &config.scene,
        config.query.class_id,
        derive_seed(seed, 2),
    ));
    Ok(DetectionSet { seed, scene, detections })
}

/// Final detections after NMS under `strategy`, scored by its ranking score.
pub fn post_process(set: &DetectionSet, strategy: NmsStrategy, nms: &NmsConfig) -> Result<Vec<Detection>> {
    let gts: Vec<Box3D> = set.scene.ground_truth.iter().map(|g| g.bbox).collect();
    let cfg = NmsConfig { strategy, ..*nms };
    Ok(run_nms(&set.detections, &cfg, Some(&gts))?
        .into_iter()
        .map(|(i, s)| Detection {
            cls_score: s,
            ..set.detections[i]
        })
        .collect())
}

pub fn evaluate_strategy(set: &DetectionSet, strategy: NmsStrategy, config: &DetectionBenchConfig) -> Result<ApReport> {
    let dets = post_process(set, strategy, &config.nms)?;
    Ok(average_precision(&[dets], &[set.scene.ground_truth.clone()], &config.query))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyAp {
    pub strategy: NmsStrategy,
    pub ap: ApReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetResult {
    pub seed: u64,
    pub detections: usize,
    pub ground_truth: usize,
    pub strategies: Vec<StrategyAp>,
}

impl SetResult {
    pub fn ap(&self, strategy: NmsStrategy) -> Option<ApReport> {
        self.strategies.iter().find(|s| s.strategy == strategy).map(|s| s.ap)
    }
}

/// Per-set AP for every strategy, plus AP pooled over all sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmsComparison {
    pub sets: Vec<SetResult>,
    pub pooled: Vec<StrategyAp>,
}

impl NmsComparison {
    pub fn pooled_ap(&self, strategy: NmsStrategy) -> Option<ApReport> {
        self.pooled.iter().find(|s| s.strategy == strategy).map(|s| s.ap)
    }
}

/// Evaluates every strategy on sets generated from `seeds`, in parallel.
/// Results are in seed order.
pub fn nms_comparison(config: &DetectionBenchConfig, seeds: &[u64]) -> Result<NmsComparison> {
    let per_set: Vec<(SetResult, Vec<Vec<Detection>>, Vec<GroundTruth>)> = seeds
        .par_iter()
        .map(|&seed| {
            let set = generate_set(config, seed)?;
            let finals = NmsStrategy::ALL
                .iter()
                .map(|&s| post_process(&set, s, &config.nms))
                .collect::<Result<Vec<_>>>()?;
            let gts = set.scene.ground_truth.clone();
            let strategies = NmsStrategy::ALL
                .iter()
                .zip(&finals)
                .map(|(&strategy, dets)| StrategyAp {
                    strategy,
                    ap: average_precision(std::slice::from_ref(dets), std::slice::from_ref(&gts), &config.query),
                })
                .collect();
            let result = SetResult {
                seed,
                detections: set.detections.len(),
                ground_truth: gts.len(),
                strategies,
            };
            Ok((result, finals, gts))
        })
        .collect::<Result<_>>()?;
    let gts: Vec<Vec<GroundTruth>> = per_set.iter().map(|p| p.2.clone()).collect();
    let pooled = NmsStrategy::ALL
        .iter()
        .enumerate()
        .map(|(k, &strategy)| {
            let dets: Vec<Vec<Detection>> = per_set.iter().map(|p| p.1[k].clone()).collect();
            StrategyAp {
                strategy,
                ap: average_precision(&dets, &gts, &config.query),
            }
        })
        .collect();
    Ok(NmsComparison {
        sets: per_set.into_iter().map(|p| p.0).collect(),
        pooled,
    })
}
