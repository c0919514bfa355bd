//! Config-driven commands behind the `pointdet` binary. Each command returns
//! a typed result; [`Report`] wraps it with the resolved configuration.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::{assign_proposals, ClassConfig, ProposalAssignment};
use crate::bench::detections::{nms_comparison, synth_background, synth_detections, DetectionBenchConfig, NmsComparison};
use crate::bench::recall::{recall_comparison, AnchorMode, ModeRecall, RecallConfig};
use crate::dataio::augment::{augment, build_gt_database, AugmentConfig};
use crate::dataio::eval::{average_precision, ApMetric, ApQuery, ApReport, Interpolation};
use crate::dataio::kitti::{
    box_to_label, class_name, format_detections, list_scene_ids, parse_calib, parse_labels, read_scene, write_scene, Calib,
    GroundTruth, ScenePaths, CAR, CYCLIST, PEDESTRIAN,
};
use crate::dataio::synth::{label_template, synth_scene, SynthConfig};
use crate::dataio::SceneSample;
use crate::error::{Error, Result};
use crate::geometry::Box3D;
use crate::losses::LossConfig;
use crate::nms::{run_nms, Detection, IouMetric, NmsConfig, NmsStrategy};
use crate::points_pool::{pool_backward, pool_forward, reference_encoder, write_pooled, PoolConfig};
use crate::rng::{derive_seed, hash_unit, seeded};
use crate::selfcheck::{run_selfcheck, SelfcheckConfig, SelfcheckReport};

pub const CONFIG_VERSION: u32 = 1;
pub const REPORT_SCHEMA: &str = "pointdet.report";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Recorded in manifests and AP reports when difficulty comes from
/// interior point counts rather than image-plane boxes.
pub const POINT_COUNT_DIFFICULTY: &str = "interior_point_count_bands";
pub const IMAGE_BOX_DIFFICULTY: &str = "image_box_height_occlusion_truncation";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Scene tree with `velodyne/`, `label_2/` and `calib/`.
    pub scenes: Option<PathBuf>,
    /// Detection rows, one `<id>.txt` per scene.
    pub detections: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthJob {
    pub scenes: usize,
    pub scene: SynthConfig,
    /// Applied to every written scene when set.
    pub augment: Option<AugmentConfig>,
    /// Also write noisy detections under `detections/`, post-processed with
    /// the top-level NMS config.
    pub write_detections: bool,
}

impl Default for SynthJob {
    fn default() -> Self {
        Self {
            scenes: 20,
            scene: SynthConfig::default(),
            augment: None,
            write_detections: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmsCompareJob {
    /// Sets are seeded `seed, seed + 1, ...`.
    pub sets: usize,
    pub bench: DetectionBenchConfig,
}

impl Default for NmsCompareJob {
    fn default() -> Self {
        Self {
            sets: 20,
            bench: DetectionBenchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalClass {
    pub class_id: usize,
    pub iou_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalJob {
    pub classes: Vec<EvalClass>,
    pub metrics: Vec<ApMetric>,
    pub interpolations: Vec<Interpolation>,
}

impl Default for EvalJob {
    fn default() -> Self {
        Self {
            classes: vec![
                EvalClass { class_id: CAR, iou_threshold: 0.7 },
                EvalClass { class_id: PEDESTRIAN, iou_threshold: 0.5 },
                EvalClass { class_id: CYCLIST, iou_threshold: 0.5 },
            ],
            metrics: vec![ApMetric::ThreeD, ApMetric::Bev],
            interpolations: vec![Interpolation::R11, Interpolation::R40],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolCheckJob {
    /// Synthetic scenes used when no scene directory is given.
    pub scenes: usize,
    /// Jittered proposals per ground-truth object.
    pub proposals_per_object: usize,
    /// Pooled tensors written under `pooled/` when an output dir is set.
    pub dump: usize,
}

impl Default for PoolCheckJob {
    fn default() -> Self {
        Self {
            scenes: 4,
            proposals_per_object: 2,
            dump: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    /// Root of every seed used by a command.
    pub seed: u64,
    /// Rayon worker threads; all cores when absent.
    pub workers: Option<usize>,
    pub paths: PathsConfig,
    pub classes: Vec<ClassConfig>,
    pub pool: PoolConfig,
    pub nms: NmsConfig,
    pub loss: LossConfig,
    pub synth: SynthJob,
    pub recall: RecallConfig,
    pub nms_compare: NmsCompareJob,
    pub eval: EvalJob,
    pub pool_check: PoolCheckJob,
    pub selfcheck: SelfcheckConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            workers: None,
            paths: PathsConfig::default(),
            classes: vec![ClassConfig::car(), ClassConfig::pedestrian(), ClassConfig::cyclist()],
            pool: PoolConfig::default(),
            nms: NmsConfig {
                strategy: NmsStrategy::IouGuided,
                metric: IouMetric::BevRotated,
                threshold: 0.1,
                ..NmsConfig::test()
            },
            loss: LossConfig::default(),
            synth: SynthJob::default(),
            recall: RecallConfig::default(),
            nms_compare: NmsCompareJob::default(),
            eval: EvalJob::default(),
            pool_check: PoolCheckJob::default(),
            selfcheck: SelfcheckConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::InvalidConfig(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidConfig("workers must be >= 1".into()));
        }
        for c in &self.classes {
            c.validate()?;
        }
        self.recall.class.validate()?;
        self.pool.validate()?;
        self.nms.validate()?;
        self.loss.validate()?;
        self.synth.scene.validate()?;
        if let Some(a) = &self.synth.augment {
            a.validate()?;
        }
        self.nms_compare.bench.scene.validate()?;
        self.nms_compare.bench.nms.validate()?;
        self.selfcheck.validate()?;
        if self.eval.classes.iter().any(|c| !(0.0..=1.0).contains(&c.iou_threshold)) {
            return Err(Error::InvalidConfig("eval IoU thresholds must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Envelope of every command's JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report<T> {
    pub schema: String,
    pub version: u32,
    pub command: String,
    pub config: PipelineConfig,
    pub result: T,
}

impl<T: Serialize> Report<T> {
    pub fn new(command: &str, config: &PipelineConfig, result: T) -> Self {
        Self {
            schema: REPORT_SCHEMA.into(),
            version: CONFIG_VERSION,
            command: command.into(),
            config: config.clone(),
            result,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// Writes `<out>/<command>.json` and returns the path.
    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let path = out.join(format!("{}.json", self.command));
        fs::write(&path, self.to_json()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Runs `f` on a pool of `workers` threads, or on the global pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::InvalidConfig(format!("no {what} directory given")))
}

fn scene_id(k: usize) -> String {
    format!("{k:06}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestScene {
    pub id: String,
    pub seed: u64,
    pub objects: usize,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub difficulty_source: String,
    pub difficulty_bands: [usize; 3],
    pub calib: String,
    pub augmented: bool,
    pub detections: bool,
    pub scenes: Vec<ManifestScene>,
}

pub fn read_manifest(dir: &Path) -> Result<Option<Manifest>> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map(Some).map_err(|source| Error::Json { path, source })
}

/// Noisy detections for a scene, reduced by `nms`.
fn scene_detections(scene: &SceneSample, config: &PipelineConfig, seed: u64) -> Result<Vec<Detection>> {
    let noise = &config.nms_compare.bench.noise;
    let mut raw = synth_detections(&scene.ground_truth, noise, derive_seed(seed, 1), false, false)?;
    raw.extend(synth_background(&scene.ground_truth, noise, &config.synth.scene, CAR, derive_seed(seed, 2)));
    let gts: Vec<Box3D> = scene.ground_truth.iter().map(|g| g.bbox).collect();
    Ok(run_nms(&raw, &config.nms, Some(&gts))?
        .into_iter()
        .map(|(i, s)| Detection { cls_score: s, ..raw[i] })
        .collect())
}

/// Generates `synth.scenes` scenes and writes them as a benchmark-style
/// tree under `out`, plus `manifest.json`.
pub fn cmd_synth(config: &PipelineConfig, out: &Path) -> Result<Manifest> {
    let job = &config.synth;
    let seeds: Vec<u64> = (0..job.scenes).map(|k| derive_seed(config.seed, k as u64)).collect();
    let mut scenes: Vec<SceneSample> = seeds
        .par_iter()
        .enumerate()
        .map(|(k, &s)| synth_scene(&job.scene, &scene_id(k), s))
        .collect::<Result<_>>()?;
    if let Some(aug) = &job.augment {
        let db = build_gt_database(&scenes);
        scenes = scenes
            .par_iter()
            .zip(&seeds)
            .map(|(s, &seed)| augment(s, aug, &db, derive_seed(seed, 100)).map(|(a, _)| a))
            .collect::<Result<_>>()?;
    }
    let calib = Calib::axis_permutation();
    scenes.par_iter().zip(&seeds).try_for_each(|(scene, &seed)| -> Result<()> {
        let labels = scene
            .ground_truth
            .iter()
            .map(|g| box_to_label(&g.bbox, class_name(g.class_id), &calib, Some(&label_template(g.difficulty)), None))
            .collect::<Result<Vec<_>>>()?;
        write_scene(out, scene, &labels, &calib)?;
        if job.write_detections {
            let dets = scene_detections(scene, config, seed)?;
            let path = out.join("detections").join(format!("{}.txt", scene.id));
            let dir = out.join("detections");
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            fs::write(&path, format_detections(&dets, &calib)?).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    })?;
    let manifest = Manifest {
        version: CONFIG_VERSION,
        seed: config.seed,
        difficulty_source: POINT_COUNT_DIFFICULTY.into(),
        difficulty_bands: job.scene.difficulty_bands,
        calib: "axis_permutation".into(),
        augmented: job.augment.is_some(),
        detections: job.write_detections,
        scenes: scenes
            .iter()
            .zip(&seeds)
            .map(|(s, &seed)| ManifestScene {
                id: s.id.clone(),
                seed,
                objects: s.ground_truth.len(),
                points: s.cloud.len(),
            })
            .collect(),
    };
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes")).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Every scene under `dir`, in id order.
pub fn load_scenes(dir: &Path) -> Result<Vec<SceneSample>> {
    let ids = list_scene_ids(dir)?;
    ids.par_iter().map(|id| read_scene(dir, id)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallResult {
    pub scenes: usize,
    pub class: String,
    pub top_k: usize,
    pub iou_threshold: f64,
    pub modes: Vec<ModeRecall>,
    /// Sphere anchors over two-orientation cuboid anchors.
    pub anchor_ratio: f64,
}

pub fn cmd_recall(config: &PipelineConfig) -> Result<RecallResult> {
    let scenes = load_scenes(require(&config.paths.scenes, "scene")?)?;
    let modes = recall_comparison(&scenes, &config.recall, config.seed)?;
    let count = |m: AnchorMode| modes.iter().find(|r| r.mode == m).map_or(0, |r| r.anchors);
    let pair = count(AnchorMode::CuboidPair);
    Ok(RecallResult {
        scenes: scenes.len(),
        class: config.recall.class.name.clone(),
        top_k: config.recall.top_k,
        iou_threshold: config.recall.iou_threshold,
        anchor_ratio: if pair == 0 { 0.0 } else { count(AnchorMode::Sphere) as f64 / pair as f64 },
        modes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: NmsStrategy,
    /// Mean of per-set moderate AP over sets where it is defined.
    pub mean_moderate: Option<f64>,
    pub pooled: ApReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmsCompareResult {
    pub seeds: Vec<u64>,
    pub summary: Vec<StrategySummary>,
    pub comparison: NmsComparison,
}

pub fn cmd_nms_compare(config: &PipelineConfig) -> Result<NmsCompareResult> {
    let seeds: Vec<u64> = (0..config.nms_compare.sets as u64).map(|k| config.seed + k).collect();
    let comparison = nms_comparison(&config.nms_compare.bench, &seeds)?;
    let summary = NmsStrategy::ALL
        .iter()
        .map(|&strategy| {
            let vals: Vec<f64> = comparison
                .sets
                .iter()
                .filter_map(|s| s.ap(strategy).and_then(|a| a.moderate))
                .collect();
            StrategySummary {
                strategy,
                mean_moderate: (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64),
                pooled: comparison.pooled_ap(strategy).unwrap_or_default(),
            }
        })
        .collect();
    Ok(NmsCompareResult {
        seeds,
        summary,
        comparison,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApRow {
    pub class: String,
    pub metric: ApMetric,
    pub interpolation: Interpolation,
    pub iou_threshold: f64,
    pub ap: ApReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub scenes: usize,
    pub detections: usize,
    pub difficulty_source: String,
    pub table: Vec<ApRow>,
}

/// Detections of scene `id`, mapped to the LiDAR frame; a missing file
/// means no detections.
pub fn read_detections(dir: &Path, scenes: &Path, id: &str) -> Result<Vec<Detection>> {
    let path = dir.join(format!("{id}.txt"));
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let calib_path = ScenePaths::new(scenes, id).calib;
    let calib = if calib_path.exists() {
        parse_calib(&fs::read_to_string(&calib_path).map_err(|e| Error::io(&calib_path, e))?)?
    } else {
        Calib::axis_permutation()
    };
    parse_labels(&text)?
        .iter()
        .map(|l| {
            let score = l.score.ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("{}: detection rows need a score column", path.display()),
            })?;
            let g = crate::dataio::kitti::camera_to_internal(l, &calib)?;
            Ok(Detection::new(g.bbox, score, g.class_id))
        })
        .collect()
}

pub fn cmd_eval_ap(config: &PipelineConfig) -> Result<EvalResult> {
    let scene_dir = require(&config.paths.scenes, "scene")?;
    let det_dir = require(&config.paths.detections, "detection")?;
    let ids = list_scene_ids(scene_dir)?;
    let loaded: Vec<(Vec<GroundTruth>, Vec<Detection>)> = ids
        .par_iter()
        .map(|id| Ok((read_scene(scene_dir, id)?.ground_truth, read_detections(det_dir, scene_dir, id)?)))
        .collect::<Result<_>>()?;
    let (gts, dets): (Vec<_>, Vec<_>) = loaded.into_iter().unzip();
    let difficulty_source = match read_manifest(scene_dir)? {
        Some(m) => m.difficulty_source,
        None => IMAGE_BOX_DIFFICULTY.into(),
    };
    let mut table = Vec::new();
    for c in &config.eval.classes {
        for &metric in &config.eval.metrics {
            for &interpolation in &config.eval.interpolations {
                let q = ApQuery {
                    class_id: c.class_id,
                    iou_threshold: c.iou_threshold,
                    metric,
                    interpolation,
                };
                table.push(ApRow {
                    class: class_name(c.class_id).into(),
                    metric,
                    interpolation,
                    iou_threshold: c.iou_threshold,
                    ap: average_precision(&dets, &gts, &q),
                });
            }
        }
    }
    Ok(EvalResult {
        scenes: ids.len(),
        detections: dets.iter().map(Vec::len).sum(),
        difficulty_source,
        table,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolCheckResult {
    pub scenes: usize,
    pub proposals: usize,
    pub positives: usize,
    pub empty: usize,
    pub resampled: usize,
    pub max_voxel_occupancy: usize,
    pub mean_occupied_slots: f64,
    /// Worst `|<F(u) - F(0), v> - <u, F^T v>|`, relative to `max(1, |lhs|)`.
    pub max_adjoint_error: f64,
    pub encoder_width: usize,
    pub dumped: Vec<String>,
}

/// Pools jittered ground-truth proposals and one background proposal per
/// scene, checking the adjoint identity on each.
pub fn cmd_pool_check(config: &PipelineConfig) -> Result<PoolCheckResult> {
    let job = &config.pool_check;
    let scenes = match &config.paths.scenes {
        Some(dir) => load_scenes(dir)?,
        None => (0..job.scenes)
            .into_par_iter()
            .map(|k| synth_scene(&config.synth.scene, &scene_id(k), derive_seed(config.seed, k as u64)))
            .collect::<Result<_>>()?,
    };
    let pool = &config.pool;
    let width = pool.feature_width;
    struct Pooled {
        stem: String,
        tensor: crate::points_pool::PooledTensor,
        routing: crate::points_pool::RoutingRecord,
        positive: bool,
        adjoint: f64,
    }
    let per_scene: Vec<Vec<Pooled>> = scenes
        .par_iter()
        .enumerate()
        .map(|(k, scene)| {
            let seed = derive_seed(config.seed, 1000 + k as u64);
            let mut rng = seeded(seed);
            let mut proposals = Vec::new();
            for g in &scene.ground_truth {
                for _ in 0..job.proposals_per_object {
                    let b = g.bbox;
                    proposals.push((
                        g.class_id,
                        Box3D::new_unchecked(
                            [b.cx + rng.random_range(-0.4..0.4), b.cy + rng.random_range(-0.4..0.4), b.cz],
                            b.size(),
                            b.yaw + rng.random_range(-0.2..0.2),
                        ),
                    ));
                }
            }
            let s = &config.synth.scene;
            proposals.push((
                CAR,
                Box3D::new_unchecked(
                    [rng.random_range(s.x_range[0]..s.x_range[1]), rng.random_range(s.y_range[0]..s.y_range[1]), s.ground_z + 0.8],
                    [3.9, 1.6, 1.56],
                    rng.random_range(-3.0..3.0),
                ),
            ));
            let features: Vec<f64> = (0..scene.cloud.len() * width).map(|i| 2.0 * hash_unit(seed, i as u64) - 1.0).collect();
            proposals
                .iter()
                .enumerate()
                .map(|(j, (class_id, p))| {
                    let pool_seed = derive_seed(seed, j as u64);
                    let (tensor, routing) = pool_forward(&scene.cloud, &features, p, pool, pool_seed)?;
                    let (zero, _) = pool_forward(&scene.cloud, &vec![0.0; features.len()], p, pool, pool_seed)?;
                    let v: Vec<f64> = (0..tensor.values.len()).map(|i| 2.0 * hash_unit(pool_seed, i as u64) - 1.0).collect();
                    let ftv = pool_backward(&v, &routing)?;
                    let lhs: f64 = tensor.values.iter().zip(&zero.values).zip(&v).map(|((a, b), w)| (a - b) * w).sum();
                    let rhs: f64 = features.iter().zip(&ftv).map(|(a, b)| a * b).sum();
                    let class = config.classes.iter().find(|c| c.class_id == *class_id);
                    let gts: Vec<Box3D> = scene.ground_truth.iter().filter(|g| g.class_id == *class_id).map(|g| g.bbox).collect();
                    let positive = class.is_some_and(|c| {
                        matches!(assign_proposals(std::slice::from_ref(p), &gts, c)[0], ProposalAssignment::Positive { .. })
                    });
                    Ok(Pooled {
                        stem: format!("{}_{j:03}", scene.id),
                        tensor,
                        routing,
                        positive,
                        adjoint: (lhs - rhs).abs() / 1f64.max(lhs.abs()),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let all: Vec<&Pooled> = per_scene.iter().flatten().collect();
    let mut dumped = Vec::new();
    if let Some(out) = &config.paths.out {
        let dir = out.join("pooled");
        for p in all.iter().take(job.dump) {
            write_pooled(&dir, &p.stem, &p.tensor, &p.routing)?;
            dumped.push(p.stem.clone());
        }
    }
    let voxels = pool.voxels();
    let n = all.len().max(1) as f64;
    Ok(PoolCheckResult {
        scenes: scenes.len(),
        proposals: all.len(),
        positives: all.iter().filter(|p| p.positive).count(),
        empty: all.iter().filter(|p| p.tensor.empty_proposal).count(),
        resampled: all.iter().filter(|p| p.tensor.resampled).count(),
        max_voxel_occupancy: all
            .iter()
            .flat_map(|p| (0..voxels).map(|v| p.tensor.voxel_occupancy(v)))
            .max()
            .unwrap_or(0),
        mean_occupied_slots: all.iter().map(|p| p.tensor.occupied_slots() as f64).sum::<f64>() / n,
        max_adjoint_error: all.iter().map(|p| p.adjoint).fold(0.0, f64::max),
        encoder_width: all.first().map_or(0, |p| reference_encoder(&p.tensor).len()),
        dumped,
    })
}

pub fn cmd_selfcheck(config: &PipelineConfig) -> Result<SelfcheckReport> {
    let sc = SelfcheckConfig {
        seed: config.seed,
        ..config.selfcheck.clone()
    };
    run_selfcheck(&sc, &config.loss)
}
