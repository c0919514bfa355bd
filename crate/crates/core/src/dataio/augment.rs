//! Training-time scene augmentation.
//!
//! Stages run in a fixed order: ground-truth sampling, per-box jitter, flip,
//! global rotation, global scaling. Every draw comes from one seeded stream,
//! so a `(scene, config, seed)` triple always yields the same output.

use std::f64::consts::FRAC_PI_4;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::kitti::{GroundTruth, SceneSample};
use crate::error::{Error, Result};
use crate::geometry::{bev_intersection_area, normalize_angle, points_in_box, Box3D, Point3, PointCloud};
use crate::rng::{seeded, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub gt_sampling: bool,
    /// Database objects tried per scene.
    pub gt_sampling_attempts: usize,
    pub box_yaw_range: [f64; 2],
    /// Standard deviation of the per-box BEV translation, meters.
    pub box_translation_sigma: f64,
    pub flip_probability: f64,
    pub global_yaw_range: [f64; 2],
    pub global_scale_range: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            gt_sampling: true,
            gt_sampling_attempts: 10,
            box_yaw_range: [-FRAC_PI_4, FRAC_PI_4],
            box_translation_sigma: 0.25,
            flip_probability: 0.5,
            global_yaw_range: [-FRAC_PI_4, FRAC_PI_4],
            global_scale_range: [0.9, 1.1],
        }
    }
}

impl AugmentConfig {
    /// Every stage at its identity parameters.
    pub fn identity() -> Self {
        Self {
            gt_sampling: false,
            gt_sampling_attempts: 0,
            box_yaw_range: [0.0, 0.0],
            box_translation_sigma: 0.0,
            flip_probability: 0.0,
            global_yaw_range: [0.0, 0.0],
            global_scale_range: [1.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !ordered(self.box_yaw_range) || !ordered(self.global_yaw_range) || !ordered(self.global_scale_range) {
            return Err(Error::InvalidConfig("augmentation ranges must be finite and ordered".into()));
        }
        if self.global_scale_range[0] <= 0.0 {
            return Err(Error::InvalidConfig("scale range must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) || !(self.box_translation_sigma >= 0.0) {
            return Err(Error::InvalidConfig(
                "flip probability must be in [0, 1] and translation sigma >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// A ground-truth object with its interior points, cut from a source scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtDatabaseEntry {
    pub scene_id: String,
    pub gt: GroundTruth,
    pub points: Vec<Point3>,
}

/// Collects every evaluated object with at least one interior point.
pub fn build_gt_database(scenes: &[SceneSample]) -> Vec<GtDatabaseEntry> {
    let mut db = Vec::new();
    for s in scenes {
        for g in &s.ground_truth {
            if g.class_id == super::kitti::DONT_CARE {
                continue;
            }
            let points: Vec<Point3> = points_in_box(&s.cloud, &g.bbox)
                .into_iter()
                .map(|i| s.cloud.points[i])
                .collect();
            if !points.is_empty() {
                db.push(GtDatabaseEntry {
                    scene_id: s.id.clone(),
                    gt: *g,
                    points,
                });
            }
        }
    }
    db
}

/// What one augmentation pass actually did.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentRecord {
    pub inserted: usize,
    pub jittered: usize,
    pub flipped: bool,
    pub global_yaw: f64,
    pub global_scale: f64,
}

fn overlaps_any(b: &Box3D, others: impl IntoIterator<Item = Box3D>) -> bool {
    others.into_iter().any(|o| bev_intersection_area(b, &o) > 0.0)
}

fn uniform(rng: &mut Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

fn rotate_point(p: &Point3, yaw: f64) -> Point3 {
    let (s, c) = yaw.sin_cos();
    Point3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z, p.reflectance)
}

/// Inserts database objects whose BEV rectangle touches no existing box,
/// removing scene points that fall inside each inserted box.
fn gt_sample(scene: &mut SceneSample, db: &[GtDatabaseEntry], attempts: usize, rng: &mut Rng) -> usize {
    let pool: Vec<&GtDatabaseEntry> = db.iter().filter(|e| e.scene_id != scene.id).collect();
    if pool.is_empty() {
        return 0;
    }
    let mut inserted = 0;
    for _ in 0..attempts {
        let e = pool[rng.random_range(0..pool.len())];
        if overlaps_any(&e.gt.bbox, scene.ground_truth.iter().map(|g| g.bbox)) {
            continue;
        }
        let inside = points_in_box(&scene.cloud, &e.gt.bbox);
        let mut keep = vec![true; scene.cloud.len()];
        for i in inside {
            keep[i] = false;
        }
        let mut k = keep.iter();
        scene.cloud.points.retain(|_| *k.next().unwrap());
        scene.cloud.points.extend_from_slice(&e.points);
        scene.ground_truth.push(e.gt);
        inserted += 1;
    }
    inserted
}

/// Rotates and shifts each box about its own center, moving its interior
/// points rigidly. A perturbation that would overlap another box is dropped.
fn jitter_boxes(scene: &mut SceneSample, config: &AugmentConfig, rng: &mut Rng) -> usize {
    let normal = Normal::new(0.0, config.box_translation_sigma).expect("sigma validated");
    let mut moved = 0;
    for k in 0..scene.ground_truth.len() {
        let dyaw = uniform(rng, config.box_yaw_range);
        let (tx, ty) = if config.box_translation_sigma > 0.0 {
            (normal.sample(rng), normal.sample(rng))
        } else {
            (0.0, 0.0)
        };
        if dyaw == 0.0 && tx == 0.0 && ty == 0.0 {
            continue;
        }
        let old = scene.ground_truth[k].bbox;
        let new = Box3D {
            cx: old.cx + tx,
            cy: old.cy + ty,
            yaw: normalize_angle(old.yaw + dyaw),
            ..old
        };
        let others = scene
            .ground_truth
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != k)
            .map(|(_, g)| g.bbox);
        if overlaps_any(&new, others) {
            continue;
        }
        let (s, c) = dyaw.sin_cos();
        for i in points_in_box(&scene.cloud, &old) {
            let p = &mut scene.cloud.points[i];
            let (dx, dy) = (p.x - old.cx, p.y - old.cy);
            p.x = new.cx + c * dx - s * dy;
            p.y = new.cy + s * dx + c * dy;
        }
        scene.ground_truth[k].bbox = new;
        moved += 1;
    }
    moved
}

/// Mirrors the scene across the LiDAR x-z plane: `y -> -y`, `yaw -> -yaw`.
/// Applying it twice restores the input.
pub fn flip_scene(scene: &SceneSample) -> SceneSample {
    let mut out = scene.clone();
    for p in &mut out.cloud.points {
        p.y = -p.y;
    }
    for g in &mut out.ground_truth {
        g.bbox.cy = -g.bbox.cy;
        g.bbox.yaw = normalize_angle(-g.bbox.yaw);
    }
    out
}

/// Rotates points and boxes about the up axis through the origin.
pub fn rotate_scene(scene: &SceneSample, yaw: f64) -> SceneSample {
    let mut out = scene.clone();
    for p in &mut out.cloud.points {
        *p = rotate_point(p, yaw);
    }
    for g in &mut out.ground_truth {
        g.bbox = g.bbox.transformed(yaw, [0.0; 3]);
    }
    out
}

/// Multiplies every coordinate, box center and box size by `s`.
pub fn scale_scene(scene: &SceneSample, s: f64) -> SceneSample {
    let mut out = scene.clone();
    for p in &mut out.cloud.points {
        p.x *= s;
        p.y *= s;
        p.z *= s;
    }
    for g in &mut out.ground_truth {
        let b = &mut g.bbox;
        b.cx *= s;
        b.cy *= s;
        b.cz *= s;
        b.l *= s;
        b.w *= s;
        b.h *= s;
    }
    out
}

pub fn augment(scene: &SceneSample, config: &AugmentConfig, db: &[GtDatabaseEntry], seed: u64) -> Result<(SceneSample, AugmentRecord)> {
    config.validate()?;
    let mut rng = seeded(seed);
    let mut out = scene.clone();
    let mut record = AugmentRecord {
        global_scale: 1.0,
        ..Default::default()
    };
    if config.gt_sampling {
        record.inserted = gt_sample(&mut out, db, config.gt_sampling_attempts, &mut rng);
    }
    record.jittered = jitter_boxes(&mut out, config, &mut rng);
    if config.flip_probability > 0.0 && rng.random_bool(config.flip_probability) {
        out = flip_scene(&out);
        record.flipped = true;
    }
    record.global_yaw = uniform(&mut rng, config.global_yaw_range);
    if record.global_yaw != 0.0 {
        out = rotate_scene(&out, record.global_yaw);
    }
    record.global_scale = uniform(&mut rng, config.global_scale_range);
    if record.global_scale != 1.0 {
        out = scale_scene(&out, record.global_scale);
    }
    Ok((out, record))
}

/// Convenience for callers without a ground-truth database.
pub fn augment_scene(scene: &SceneSample, config: &AugmentConfig, seed: u64) -> Result<SceneSample> {
    augment(scene, config, &[], seed).map(|(s, _)| s)
}

/// Ordered interior index sets of every ground-truth box.
pub fn interior_sets(cloud: &PointCloud, gts: &[GroundTruth]) -> Vec<Vec<usize>> {
    gts.iter().map(|g| points_in_box(cloud, &g.bbox)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth::{synth_scene, SynthConfig};

    fn scene() -> SceneSample {
        synth_scene(
            &SynthConfig {
                objects: 4,
                ..SynthConfig::default()
            },
            "000001",
            3,
        )
        .unwrap()
    }

    #[test]
    fn identity_leaves_scene_unchanged() {
        let s = scene();
        let (out, rec) = augment(&s, &AugmentConfig::identity(), &[], 9).unwrap();
        assert_eq!(out, s);
        assert_eq!(rec.inserted + rec.jittered, 0);
    }

    #[test]
    fn flip_is_involution() {
        let s = scene();
        assert_eq!(flip_scene(&flip_scene(&s)), s);
    }

    #[test]
    fn rotation_keeps_membership() {
        let s = scene();
        let before = interior_sets(&s.cloud, &s.ground_truth);
        let r = rotate_scene(&s, 0.6);
        assert_eq!(interior_sets(&r.cloud, &r.ground_truth), before);
    }

    #[test]
    fn reproducible_and_non_overlapping() {
        let s = scene();
        let other = SceneSample {
            id: "000002".into(),
            ..synth_scene(&SynthConfig::default(), "000002", 4).unwrap()
        };
        let db = build_gt_database(&[other]);
        let cfg = AugmentConfig::default();
        let a = augment(&s, &cfg, &db, 17).unwrap();
        assert_eq!(a, augment(&s, &cfg, &db, 17).unwrap());
        let boxes: Vec<Box3D> = a.0.ground_truth.iter().map(|g| g.bbox).collect();
        for i in 0..boxes.len() {
            for j in i + 1..boxes.len() {
                assert_eq!(bev_intersection_area(&boxes[i], &boxes[j]), 0.0);
            }
        }
    }

    #[test]
    fn ranges_are_validated() {
        let bad = AugmentConfig {
            global_scale_range: [1.1, 0.9],
            ..AugmentConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
