//! Desk-scale synthetic LiDAR scenes.
//!
//! Objects are sampled without BEV overlap and populated only on the faces
//! that look toward a virtual sensor, with point density falling off with
//! range, so objects are partially observed the way real sweeps see them.
//! Ground and clutter points never fall inside an object.

use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::kitti::{Difficulty, GroundTruth, KittiLabel, SceneSample, CAR, CYCLIST, PEDESTRIAN};
use crate::error::{Error, Result};
use crate::geometry::{bev_intersection_area, from_box_frame, point_in_box, Box3D, Point3, PointCloud};
use crate::rng::{seeded, Rng};

/// Surface samples sit this far inside their face so membership does not
/// hinge on boundary rounding.
const SURFACE_INSET: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub objects: usize,
    /// Relative weights of Car, Pedestrian, Cyclist.
    pub class_weights: [f64; 3],
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub ground_z: f64,
    /// Surface density at 10 m, points per square meter.
    pub surface_density: f64,
    pub ground_points: usize,
    pub clutter_points: usize,
    /// Relative jitter applied to each class's mean size.
    pub size_jitter: f64,
    pub min_range: f64,
    pub max_attempts: usize,
    /// Interior-point lower bounds for easy, moderate, hard.
    pub difficulty_bands: [usize; 3],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            objects: 8,
            class_weights: [1.0, 0.0, 0.0],
            x_range: [4.0, 45.0],
            y_range: [-20.0, 20.0],
            ground_z: -1.7,
            surface_density: 60.0,
            ground_points: 3000,
            clutter_points: 1000,
            size_jitter: 0.1,
            min_range: 4.0,
            max_attempts: 2000,
            difficulty_bands: [100, 30, 8],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] < r[1];
        if !ordered(self.x_range) || !ordered(self.y_range) {
            return Err(Error::InvalidConfig("scene extents must be ordered".into()));
        }
        if self.class_weights.iter().any(|w| !(*w >= 0.0)) || self.class_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidConfig("class weights must be non-negative with a positive sum".into()));
        }
        if !(self.surface_density > 0.0) || !(0.0..0.5).contains(&self.size_jitter) {
            return Err(Error::InvalidConfig(
                "surface density must be positive and size jitter in [0, 0.5)".into(),
            ));
        }
        let [e, m, h] = self.difficulty_bands;
        if !(e >= m && m >= h) {
            return Err(Error::InvalidConfig("difficulty bands must be non-increasing".into()));
        }
        Ok(())
    }
}

/// Mean `(l, w, h)` of a class.
pub fn mean_size(class_id: usize) -> [f64; 3] {
    match class_id {
        PEDESTRIAN => [0.8, 0.6, 1.73],
        CYCLIST => [1.76, 0.6, 1.73],
        _ => [3.9, 1.6, 1.56],
    }
}

/// Difficulty from the number of interior points.
pub fn difficulty_from_points(count: usize, bands: [usize; 3]) -> Difficulty {
    if count >= bands[0] {
        Difficulty::Easy
    } else if count >= bands[1] {
        Difficulty::Moderate
    } else if count >= bands[2] {
        Difficulty::Hard
    } else {
        Difficulty::Ignored
    }
}

/// Placeholder 2D fields that bucket to `d` under the benchmark rule, so
/// written labels keep the point-count difficulty.
pub fn label_template(d: Difficulty) -> KittiLabel {
    let (height, occlusion, truncation) = match d {
        Difficulty::Easy => (50.0, 0, 0.0),
        Difficulty::Moderate => (30.0, 1, 0.0),
        Difficulty::Hard => (30.0, 2, 0.0),
        Difficulty::Ignored => (10.0, 3, 0.0),
    };
    KittiLabel {
        class_name: String::new(),
        truncation,
        occlusion,
        alpha: 0.0,
        bbox: [0.0, 0.0, 10.0, height],
        dimensions: [0.0; 3],
        location: [0.0; 3],
        rotation_y: 0.0,
        score: None,
    }
}

fn pick_class(weights: [f64; 3], rng: &mut Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (k, w) in weights.iter().enumerate() {
        if u < *w {
            return [CAR, PEDESTRIAN, CYCLIST][k];
        }
        u -= w;
    }
    CAR
}

fn place_boxes(config: &SynthConfig, rng: &mut Rng) -> Result<Vec<(Box3D, usize)>> {
    let mut boxes: Vec<(Box3D, usize)> = Vec::with_capacity(config.objects);
    let mut attempts = 0;
    while boxes.len() < config.objects {
        attempts += 1;
        if attempts > config.max_attempts {
            return Err(Error::InfeasiblePacking {
                requested: config.objects,
                attempts: config.max_attempts,
            });
        }
        let class = pick_class(config.class_weights, rng);
        let mean = mean_size(class);
        let j = config.size_jitter;
        let size = mean.map(|m| m * (1.0 + if j > 0.0 { rng.random_range(-j..j) } else { 0.0 }));
        let x = rng.random_range(config.x_range[0]..config.x_range[1]);
        let y = rng.random_range(config.y_range[0]..config.y_range[1]);
        if x.hypot(y) < config.min_range {
            continue;
        }
        let yaw = rng.random_range(-PI..PI);
        let b = Box3D::new([x, y, config.ground_z + 0.5 * size[2]], size, yaw)?;
        if boxes.iter().any(|(o, _)| bev_intersection_area(&b, o) > 0.0) {
            continue;
        }
        boxes.push((b, class));
    }
    Ok(boxes)
}

/// Points on the faces of `b` that face the sensor at the origin. Returns at
/// least one point.
fn visible_surface(b: &Box3D, config: &SynthConfig, rng: &mut Rng) -> Vec<Point3> {
    let half = [0.5 * b.l, 0.5 * b.w, 0.5 * b.h];
    let range = b.cx.hypot(b.cy).max(1.0);
    let density = config.surface_density * (10.0 / range).powi(2).min(4.0);
    let mut out = Vec::new();
    // (axis, sign) for the side faces and the roof; the floor is never seen
    let faces = [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0), (2, 1.0)];
    for (axis, sign) in faces {
        let mut local_c = [0.0; 3];
        local_c[axis] = sign * half[axis];
        let world_c = from_box_frame(local_c, b);
        let normal = {
            let tip = {
                let mut t = local_c;
                t[axis] += sign;
                from_box_frame(t, b)
            };
            [tip[0] - world_c[0], tip[1] - world_c[1], tip[2] - world_c[2]]
        };
        let norm = world_c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let cos = -(normal[0] * world_c[0] + normal[1] * world_c[1] + normal[2] * world_c[2]) / norm;
        if cos <= 0.0 {
            continue;
        }
        let (u, v) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let area = 4.0 * half[u] * half[v];
        let expected = density * area * cos;
        let n = expected.floor() as usize + usize::from(rng.random_bool(expected.fract()));
        for _ in 0..n {
            let mut p = [0.0; 3];
            p[axis] = sign * (half[axis] - SURFACE_INSET);
            p[u] = rng.random_range(-1.0..1.0) * (half[u] - SURFACE_INSET);
            p[v] = rng.random_range(-1.0..1.0) * (half[v] - SURFACE_INSET);
            let w = from_box_frame(p, b);
            out.push(Point3::new(w[0], w[1], w[2], rng.random_range(0.1..0.9)));
        }
    }
    if out.is_empty() {
        let w = from_box_frame([0.0, 0.0, half[2] - SURFACE_INSET], b);
        out.push(Point3::new(w[0], w[1], w[2], 0.5));
    }
    out
}

pub fn synth_scene(config: &SynthConfig, id: &str, seed: u64) -> Result<SceneSample> {
    config.validate()?;
    let mut rng = seeded(seed);
    let boxes = place_boxes(config, &mut rng)?;
    let mut points = Vec::new();
    let mut counts = Vec::with_capacity(boxes.len());
    for (b, _) in &boxes {
        let surf = visible_surface(b, config, &mut rng);
        counts.push(surf.len());
        points.extend(surf);
    }
    let inside_any = |p: &[f64; 3]| boxes.iter().any(|(b, _)| point_in_box(*p, b));
    let [x0, x1] = config.x_range;
    let [y0, y1] = config.y_range;
    for _ in 0..config.ground_points {
        let p = [
            rng.random_range(x0..x1),
            rng.random_range(y0..y1),
            config.ground_z - rng.random_range(0.01..0.05),
        ];
        points.push(Point3::new(p[0], p[1], p[2], rng.random_range(0.0..0.3)));
    }
    let mut placed = 0;
    while placed < config.clutter_points {
        let p = [
            rng.random_range(x0..x1),
            rng.random_range(y0..y1),
            config.ground_z + rng.random_range(0.0..2.5),
        ];
        if inside_any(&p) {
            continue;
        }
        points.push(Point3::new(p[0], p[1], p[2], rng.random_range(0.0..1.0)));
        placed += 1;
    }
    let ground_truth = boxes
        .iter()
        .zip(&counts)
        .map(|((b, class), &n)| GroundTruth {
            bbox: *b,
            class_id: *class,
            difficulty: difficulty_from_points(n, config.difficulty_bands),
        })
        .collect();
    Ok(SceneSample {
        id: id.to_string(),
        cloud: PointCloud::new(points),
        ground_truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{points_in_box, rotated_bev_iou};

    #[test]
    fn empty_scene_is_clutter_only() {
        let cfg = SynthConfig {
            objects: 0,
            ..SynthConfig::default()
        };
        let s = synth_scene(&cfg, "0", 1).unwrap();
        assert!(s.ground_truth.is_empty());
        assert_eq!(s.cloud.len(), cfg.ground_points + cfg.clutter_points);
    }

    #[test]
    fn objects_are_populated_and_disjoint() {
        for seed in 0..5 {
            let cfg = SynthConfig {
                objects: 12,
                class_weights: [1.0, 1.0, 1.0],
                ..SynthConfig::default()
            };
            let s = synth_scene(&cfg, "0", seed).unwrap();
            assert_eq!(s.ground_truth.len(), 12);
            for (i, g) in s.ground_truth.iter().enumerate() {
                let n = points_in_box(&s.cloud, &g.bbox).len();
                assert!(n >= 1);
                assert_eq!(g.difficulty, difficulty_from_points(n, cfg.difficulty_bands));
                for h in &s.ground_truth[i + 1..] {
                    assert_eq!(rotated_bev_iou(&g.bbox, &h.bbox), 0.0);
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let cfg = SynthConfig::default();
        assert_eq!(synth_scene(&cfg, "7", 5).unwrap(), synth_scene(&cfg, "7", 5).unwrap());
    }

    #[test]
    fn packing_can_fail() {
        let cfg = SynthConfig {
            objects: 500,
            x_range: [4.0, 10.0],
            y_range: [-3.0, 3.0],
            max_attempts: 200,
            ..SynthConfig::default()
        };
        assert!(matches!(synth_scene(&cfg, "0", 0), Err(Error::InfeasiblePacking { .. })));
    }

    #[test]
    fn template_buckets_match() {
        for d in [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard, Difficulty::Ignored] {
            assert_eq!(super::super::kitti::difficulty_of(&label_template(d)), d);
        }
    }
}
