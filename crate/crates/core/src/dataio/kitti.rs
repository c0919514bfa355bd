//! KITTI object-benchmark file formats and the camera/LiDAR frame mapping.
//!
//! Labels store a bottom-face center in the rectified camera frame with the
//! heading `rotation_y` about camera `-y`. Internally boxes live in the LiDAR
//! frame with a volumetric center and yaw about `+z`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Box3D, Point3, PointCloud};
use crate::nms::Detection;

pub const DONT_CARE: usize = 0;
pub const CAR: usize = 1;
pub const PEDESTRIAN: usize = 2;
pub const CYCLIST: usize = 3;
/// Labeled but not evaluated (Van, Truck, Tram, ...).
pub const OTHER: usize = 4;

pub fn class_id(name: &str) -> usize {
    match name {
        "Car" => CAR,
        "Pedestrian" => PEDESTRIAN,
        "Cyclist" => CYCLIST,
        "DontCare" => DONT_CARE,
        _ => OTHER,
    }
}

pub fn class_name(id: usize) -> &'static str {
    match id {
        CAR => "Car",
        PEDESTRIAN => "Pedestrian",
        CYCLIST => "Cyclist",
        DONT_CARE => "DontCare",
        _ => "Misc",
    }
}

/// Decodes packed little-endian `f32` quadruples `(x, y, z, reflectance)`.
pub fn parse_velodyne(bytes: &[u8]) -> Result<PointCloud> {
    let trailing = bytes.len() % 16;
    if trailing != 0 {
        return Err(Error::TrailingBytes {
            offset: bytes.len() - trailing,
            trailing,
        });
    }
    let points = bytes
        .chunks_exact(16)
        .map(|c| {
            let f = |k: usize| f32::from_le_bytes(c[4 * k..4 * k + 4].try_into().unwrap()) as f64;
            Point3::new(f(0), f(1), f(2), f(3))
        })
        .collect();
    Ok(PointCloud::new(points))
}

/// Encodes a cloud as packed `f32`; coordinates are rounded to single
/// precision.
pub fn write_velodyne(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * 16);
    for p in &cloud.points {
        for v in [p.x, p.y, p.z, p.reflectance] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn read_velodyne_file(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_velodyne(&bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KittiLabel {
    pub class_name: String,
    pub truncation: f64,
    /// 0 visible .. 3 unknown; DontCare rows use -1.
    pub occlusion: i8,
    pub alpha: f64,
    /// `(left, top, right, bottom)` in pixels.
    pub bbox: [f64; 4],
    /// `(h, w, l)` in meters.
    pub dimensions: [f64; 3],
    /// Bottom-face center in the rectified camera frame.
    pub location: [f64; 3],
    pub rotation_y: f64,
    /// Present on detection rows only.
    pub score: Option<f64>,
}

impl KittiLabel {
    pub fn bbox_height(&self) -> f64 {
        self.bbox[3] - self.bbox[1]
    }
}

/// Parses the 15-column layout, with an optional 16th score column. Blank
/// lines are skipped; any whitespace separates fields.
pub fn parse_labels(text: &str) -> Result<Vec<KittiLabel>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() != 15 && cols.len() != 16 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 15 or 16 columns, found {}", cols.len()),
            });
        }
        let num = |k: usize| -> Result<f64> {
            cols[k].parse::<f64>().map_err(|e| Error::Parse {
                line: line_no,
                message: format!("column {}: {e}", k + 1),
            })
        };
        let occlusion = num(2)?;
        if !(-1.0..=3.0).contains(&occlusion) || occlusion.fract() != 0.0 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("occlusion must be -1..=3, found {}", cols[2]),
            });
        }
        out.push(KittiLabel {
            class_name: cols[0].to_string(),
            truncation: num(1)?,
            occlusion: occlusion as i8,
            alpha: num(3)?,
            bbox: [num(4)?, num(5)?, num(6)?, num(7)?],
            dimensions: [num(8)?, num(9)?, num(10)?],
            location: [num(11)?, num(12)?, num(13)?],
            rotation_y: num(14)?,
            score: if cols.len() == 16 { Some(num(15)?) } else { None },
        });
    }
    Ok(out)
}

/// One label row. Values use the shortest representation that parses back
/// to the same `f64`.
pub fn format_label(l: &KittiLabel) -> String {
    let mut s = format!("{} {} {} {}", l.class_name, l.truncation, l.occlusion, l.alpha);
    for v in l.bbox.iter().chain(&l.dimensions).chain(&l.location) {
        write!(s, " {v}").unwrap();
    }
    write!(s, " {}", l.rotation_y).unwrap();
    if let Some(score) = l.score {
        write!(s, " {score}").unwrap();
    }
    s
}

pub fn format_labels(labels: &[KittiLabel]) -> String {
    labels.iter().map(|l| format_label(l) + "\n").collect()
}

/// Sensor calibration. Only the LiDAR/rectified-camera chain is used; `P2`
/// is carried through for completeness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calib {
    pub p2: [f64; 12],
    pub r0_rect: [f64; 9],
    pub tr_velo_to_cam: [f64; 12],
}

impl Calib {
    /// Identity rotation and translation between the two frames.
    pub fn identity() -> Self {
        Self {
            p2: [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            r0_rect: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            tr_velo_to_cam: [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        }
    }

    /// The ideal axis permutation: camera x right, y down, z forward; LiDAR
    /// x forward, y left, z up.
    pub fn axis_permutation() -> Self {
        Self {
            tr_velo_to_cam: [0.0, -1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            ..Self::identity()
        }
    }

    fn r0(&self) -> Matrix3<f64> {
        Matrix3::from_row_slice(&self.r0_rect)
    }

    fn tr_rot(&self) -> Matrix3<f64> {
        let t = &self.tr_velo_to_cam;
        Matrix3::new(t[0], t[1], t[2], t[4], t[5], t[6], t[8], t[9], t[10])
    }

    fn tr_t(&self) -> Vector3<f64> {
        let t = &self.tr_velo_to_cam;
        Vector3::new(t[3], t[7], t[11])
    }

    /// Linear part of the rectified-camera to LiDAR map.
    fn cam_to_velo_rot(&self) -> Result<Matrix3<f64>> {
        (self.r0() * self.tr_rot())
            .try_inverse()
            .ok_or_else(|| Error::InvalidConfig("calibration is not invertible".into()))
    }

    pub fn velo_to_cam(&self, p: [f64; 3]) -> [f64; 3] {
        let v = self.r0() * (self.tr_rot() * Vector3::from(p) + self.tr_t());
        [v.x, v.y, v.z]
    }

    pub fn cam_to_velo(&self, p: [f64; 3]) -> Result<[f64; 3]> {
        let r0_inv = self
            .r0()
            .try_inverse()
            .ok_or_else(|| Error::InvalidConfig("R0_rect is not invertible".into()))?;
        let tr_inv = self
            .tr_rot()
            .try_inverse()
            .ok_or_else(|| Error::InvalidConfig("Tr_velo_to_cam is not invertible".into()))?;
        let v = tr_inv * (r0_inv * Vector3::from(p) - self.tr_t());
        Ok([v.x, v.y, v.z])
    }
}

pub fn parse_calib(text: &str) -> Result<Calib> {
    let mut p2 = None;
    let mut r0 = None;
    let mut tr = None;
    for (n, line) in text.lines().enumerate() {
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        let vals: Vec<f64> = rest
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: n + 1,
                message: format!("{key}: {e}"),
            })?;
        let want = |len: usize| -> Result<Vec<f64>> {
            if vals.len() == len {
                Ok(vals.clone())
            } else {
                Err(Error::Parse {
                    line: n + 1,
                    message: format!("{key}: expected {len} values, found {}", vals.len()),
                })
            }
        };
        match key.trim() {
            "P2" => p2 = Some(want(12)?),
            "R0_rect" | "R_rect" => r0 = Some(want(9)?),
            "Tr_velo_to_cam" | "Tr_velo_cam" => tr = Some(want(12)?),
            _ => {}
        }
    }
    let missing = |k: &str| Error::Parse {
        line: 0,
        message: format!("calibration lacks {k}"),
    };
    Ok(Calib {
        p2: p2.ok_or_else(|| missing("P2"))?.try_into().unwrap(),
        r0_rect: r0.ok_or_else(|| missing("R0_rect"))?.try_into().unwrap(),
        tr_velo_to_cam: tr.ok_or_else(|| missing("Tr_velo_to_cam"))?.try_into().unwrap(),
    })
}

pub fn format_calib(c: &Calib) -> String {
    let row = |name: &str, v: &[f64]| {
        let mut s = format!("{name}:");
        for x in v {
            write!(s, " {x}").unwrap();
        }
        s + "\n"
    };
    row("P2", &c.p2) + &row("R0_rect", &c.r0_rect) + &row("Tr_velo_to_cam", &c.tr_velo_to_cam)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
    Ignored,
}

impl Difficulty {
    pub const LEVELS: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    pub fn name(&self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Moderate => "moderate",
            Difficulty::Hard => "hard",
            Difficulty::Ignored => "ignored",
        }
    }
}

/// Official benchmark buckets from 2D box height, occlusion and truncation.
pub fn difficulty_of(label: &KittiLabel) -> Difficulty {
    let h = label.bbox_height();
    let (occ, trunc) = (label.occlusion, label.truncation);
    if h >= 40.0 && occ == 0 && trunc <= 0.15 {
        Difficulty::Easy
    } else if h >= 25.0 && (0..=1).contains(&occ) && trunc <= 0.30 {
        Difficulty::Moderate
    } else if h >= 25.0 && (0..=2).contains(&occ) && trunc <= 0.50 {
        Difficulty::Hard
    } else {
        Difficulty::Ignored
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bbox: Box3D,
    pub class_id: usize,
    pub difficulty: Difficulty,
}

/// Maps a rectified-camera heading to LiDAR yaw.
fn yaw_from_rotation_y(ry: f64, m: &Matrix3<f64>) -> f64 {
    let d = m * Vector3::new(ry.cos(), 0.0, -ry.sin());
    d.y.atan2(d.x)
}

/// Inverse of [`yaw_from_rotation_y`]: the `ry` whose mapped heading
/// projects onto the ground plane along `yaw`.
fn rotation_y_from_yaw(yaw: f64, m: &Matrix3<f64>) -> f64 {
    let (s, c) = yaw.sin_cos();
    let (a, b) = (m.column(0), m.column(2));
    let ry = (a[1] * c - a[0] * s).atan2(b[1] * c - b[0] * s);
    let heading = |ry: f64| {
        let d = a * ry.cos() - b * ry.sin();
        d[0] * c + d[1] * s
    };
    if heading(ry) >= 0.0 {
        normalize_angle(ry)
    } else {
        normalize_angle(ry + std::f64::consts::PI)
    }
}

pub fn camera_to_internal(label: &KittiLabel, calib: &Calib) -> Result<GroundTruth> {
    let [h, w, l] = label.dimensions;
    let cam_center = [label.location[0], label.location[1] - 0.5 * h, label.location[2]];
    let center = calib.cam_to_velo(cam_center)?;
    let yaw = yaw_from_rotation_y(label.rotation_y, &calib.cam_to_velo_rot()?);
    let class_id = class_id(&label.class_name);
    let difficulty = if class_id == DONT_CARE {
        Difficulty::Ignored
    } else {
        difficulty_of(label)
    };
    // DontCare rows carry placeholder dimensions, so skip validation there.
    let bbox = if class_id == DONT_CARE {
        Box3D::new_unchecked(center, [l, w, h], yaw)
    } else {
        Box3D::new(center, [l, w, h], yaw)?
    };
    Ok(GroundTruth {
        bbox,
        class_id,
        difficulty,
    })
}

/// Camera-frame `(location, rotation_y)` for an internal box.
pub fn internal_to_camera(b: &Box3D, calib: &Calib) -> Result<([f64; 3], f64)> {
    let c = calib.velo_to_cam(b.center());
    let ry = rotation_y_from_yaw(b.yaw, &calib.cam_to_velo_rot()?);
    Ok(([c[0], c[1] + 0.5 * b.h, c[2]], ry))
}

/// A label row for `b`. 2D fields are filled from `template` when given.
pub fn box_to_label(b: &Box3D, class: &str, calib: &Calib, template: Option<&KittiLabel>, score: Option<f64>) -> Result<KittiLabel> {
    let (location, rotation_y) = internal_to_camera(b, calib)?;
    let alpha = normalize_angle(rotation_y - location[0].atan2(location[2]));
    Ok(KittiLabel {
        class_name: class.to_string(),
        truncation: template.map_or(0.0, |t| t.truncation),
        occlusion: template.map_or(0, |t| t.occlusion),
        alpha,
        bbox: template.map_or([0.0, 0.0, 50.0, 50.0], |t| t.bbox),
        dimensions: [b.h, b.w, b.l],
        location,
        rotation_y,
        score,
    })
}

/// Detection rows in the benchmark submission layout (16 columns).
pub fn format_detections(dets: &[Detection], calib: &Calib) -> Result<String> {
    let rows = dets
        .iter()
        .map(|d| {
            box_to_label(&d.bbox, class_name(d.class_id), calib, None, Some(d.cls_score)).map(|mut l| {
                l.bbox = [-1.0; 4];
                l.truncation = -1.0;
                format_label(&l)
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().map(|r| r + "\n").collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSample {
    pub id: String,
    pub cloud: PointCloud,
    pub ground_truth: Vec<GroundTruth>,
}

/// File locations of one scene under a benchmark-style directory tree.
pub struct ScenePaths {
    pub velodyne: PathBuf,
    pub label: PathBuf,
    pub calib: PathBuf,
}

impl ScenePaths {
    pub fn new(root: &Path, id: &str) -> Self {
        Self {
            velodyne: root.join("velodyne").join(format!("{id}.bin")),
            label: root.join("label_2").join(format!("{id}.txt")),
            calib: root.join("calib").join(format!("{id}.txt")),
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes velodyne, label and calib files for one scene. `labels` supplies
/// the 2D fields; pass rows aligned with `scene.ground_truth`.
pub fn write_scene(root: &Path, scene: &SceneSample, labels: &[KittiLabel], calib: &Calib) -> Result<()> {
    let paths = ScenePaths::new(root, &scene.id);
    write_file(&paths.velodyne, &write_velodyne(&scene.cloud))?;
    write_file(&paths.label, format_labels(labels).as_bytes())?;
    write_file(&paths.calib, format_calib(calib).as_bytes())
}

pub fn read_scene(root: &Path, id: &str) -> Result<SceneSample> {
    let paths = ScenePaths::new(root, id);
    let cloud = read_velodyne_file(&paths.velodyne)?;
    let calib = if paths.calib.exists() {
        parse_calib(&read_text(&paths.calib)?)?
    } else {
        Calib::axis_permutation()
    };
    let labels = if paths.label.exists() {
        parse_labels(&read_text(&paths.label)?)?
    } else {
        Vec::new()
    };
    let ground_truth = labels
        .iter()
        .map(|l| camera_to_internal(l, &calib))
        .collect::<Result<_>>()?;
    Ok(SceneSample {
        id: id.to_string(),
        cloud,
        ground_truth,
    })
}

/// Scene ids under `root/velodyne`, sorted.
pub fn list_scene_ids(root: &Path) -> Result<Vec<String>> {
    let dir = root.join("velodyne");
    let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut ids = Vec::new();
    for e in entries {
        let path = e.map_err(|e| Error::io(&dir, e))?.path();
        if path.extension().is_some_and(|x| x == "bin") {
            if let Some(stem) = path.file_stem() {
                ids.push(stem.to_string_lossy().into_owned());
            }
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(Error::NoScenes(root.to_path_buf()));
    }
    Ok(ids)
}
