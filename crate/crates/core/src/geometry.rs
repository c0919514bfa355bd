//! Oriented-box and sphere geometry in the LiDAR frame.
//!
//! The internal frame is right-handed with `z` up. Yaw is measured
//! counter-clockwise about `+z` starting from `+x`, and a box's `l` extent
//! lies along its heading. Box centers are volumetric centers.
//!
//! Regions are closed: a point exactly on a box face or on a sphere surface
//! counts as inside.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// On-edge tolerance used by the polygon clipper, in meters.
pub const CLIP_EPS: f64 = 1e-9;

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(angle: f64) -> f64 {
    let mut a = (angle + PI).rem_euclid(2.0 * PI) - PI;
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub reflectance: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64, reflectance: f64) -> Self {
        Self {
            x,
            y,
            z,
            reflectance,
        }
    }

    pub fn at(x: f64, y: f64, z: f64) -> Self {
        Self::new(x, y, z, 0.0)
    }

    pub fn pos(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.reflectance.is_finite()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    fn with_pos(&self, p: [f64; 3]) -> Self {
        Self::new(p[0], p[1], p[2], self.reflectance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    #[default]
    Lidar,
    Camera,
}

/// An ordered point cloud. Point indices are identities and are never
/// reordered by library operations.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub frame: Frame,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self {
            points,
            frame: Frame::Lidar,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// An oriented 3D box that rotates only about the up axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
}

impl Box3D {
    /// Validated constructor; the yaw is wrapped into `(-π, π]`.
    pub fn new(center: [f64; 3], size: [f64; 3], yaw: f64) -> Result<Self> {
        let b = Self::new_unchecked(center, size, yaw);
        b.validate()?;
        Ok(b)
    }

    pub fn new_unchecked(center: [f64; 3], size: [f64; 3], yaw: f64) -> Self {
        Self {
            cx: center[0],
            cy: center[1],
            cz: center[2],
            l: size[0],
            w: size[1],
            h: size[2],
            yaw: normalize_angle(yaw),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.cx, self.cy, self.cz, self.l, self.w, self.h, self.yaw];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("box"));
        }
        if self.l <= 0.0 || self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "non-positive size ({}, {}, {})",
                self.l, self.w, self.h
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> [f64; 3] {
        [self.cx, self.cy, self.cz]
    }

    pub fn size(&self) -> [f64; 3] {
        [self.l, self.w, self.h]
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }

    pub fn bev_area(&self) -> f64 {
        self.l * self.w
    }

    pub fn z_min(&self) -> f64 {
        self.cz - 0.5 * self.h
    }

    pub fn z_max(&self) -> f64 {
        self.cz + 0.5 * self.h
    }

    /// True when the box has a zero, negative or non-finite extent.
    pub fn is_degenerate(&self) -> bool {
        !(self.l > 0.0 && self.w > 0.0 && self.h > 0.0)
            || !self.l.is_finite()
            || !self.w.is_finite()
            || !self.h.is_finite()
    }

    /// Applies a rigid motion: rotate by `yaw` about the up axis through the
    /// origin, then translate.
    pub fn transformed(&self, yaw: f64, translation: [f64; 3]) -> Self {
        let (s, c) = yaw.sin_cos();
        Self {
            cx: c * self.cx - s * self.cy + translation[0],
            cy: s * self.cx + c * self.cy + translation[1],
            cz: self.cz + translation[2],
            l: self.l,
            w: self.w,
            h: self.h,
            yaw: normalize_angle(self.yaw + yaw),
        }
    }
}

/// Local (box-frame) corner signs in the documented order: bottom face
/// counter-clockwise from front-left, then the top face in the same order.
const CORNER_SIGNS: [[f64; 3]; 8] = [
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
];

/// The 8 corners of `b`, bottom face first (front-left, back-left,
/// back-right, front-right), then the top face in the same order.
pub fn box_corners(b: &Box3D) -> [[f64; 3]; 8] {
    let (s, c) = b.yaw.sin_cos();
    let mut out = [[0.0; 3]; 8];
    for (corner, sign) in out.iter_mut().zip(CORNER_SIGNS.iter()) {
        let lx = 0.5 * b.l * sign[0];
        let ly = 0.5 * b.w * sign[1];
        let lz = 0.5 * b.h * sign[2];
        *corner = [b.cx + c * lx - s * ly, b.cy + s * lx + c * ly, b.cz + lz];
    }
    out
}

/// Corner positions of `b` as functions of its 7 parameters, together with
/// the Jacobian `d corner[k][axis] / d (cx, cy, cz, l, w, h, yaw)`.
pub fn box_corners_with_jacobian(b: &Box3D) -> ([[f64; 3]; 8], [[[f64; 7]; 3]; 8]) {
    let (s, c) = b.yaw.sin_cos();
    let corners = box_corners(b);
    let mut jac = [[[0.0; 7]; 3]; 8];
    for (k, sign) in CORNER_SIGNS.iter().enumerate() {
        let lx = 0.5 * b.l * sign[0];
        let ly = 0.5 * b.w * sign[1];
        // x = cx + c*lx - s*ly
        jac[k][0][0] = 1.0;
        jac[k][0][3] = c * 0.5 * sign[0];
        jac[k][0][4] = -s * 0.5 * sign[1];
        jac[k][0][6] = -s * lx - c * ly;
        // y = cy + s*lx + c*ly
        jac[k][1][1] = 1.0;
        jac[k][1][3] = s * 0.5 * sign[0];
        jac[k][1][4] = c * 0.5 * sign[1];
        jac[k][1][6] = c * lx - s * ly;
        // z = cz + h/2 * sign
        jac[k][2][2] = 1.0;
        jac[k][2][5] = 0.5 * sign[2];
    }
    (corners, jac)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConvexPolygon2D {
    /// Counter-clockwise vertices.
    pub vertices: Vec<[f64; 2]>,
}

impl ConvexPolygon2D {
    pub fn new(vertices: Vec<[f64; 2]>) -> Self {
        Self { vertices }
    }

    /// Shoelace signed area; positive for counter-clockwise order.
    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        if n < 3 {
            return 0.0;
        }
        let mut acc = 0.0;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            acc += a[0] * b[1] - a[1] * b[0];
        }
        0.5 * acc
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            cross(a, b, p) >= -CLIP_EPS
        })
    }

    /// Sutherland–Hodgman clip of `self` against the convex `clip` polygon.
    pub fn clip(&self, clip: &ConvexPolygon2D) -> ConvexPolygon2D {
        let mut output = self.vertices.clone();
        let m = clip.vertices.len();
        for i in 0..m {
            if output.is_empty() {
                break;
            }
            let a = clip.vertices[i];
            let b = clip.vertices[(i + 1) % m];
            let input = std::mem::take(&mut output);
            let n = input.len();
            for j in 0..n {
                let cur = input[j];
                let prev = input[(j + n - 1) % n];
                let cur_side = signed_distance(a, b, cur);
                let prev_side = signed_distance(a, b, prev);
                let cur_in = cur_side >= -CLIP_EPS;
                let prev_in = prev_side >= -CLIP_EPS;
                if cur_in {
                    if !prev_in {
                        output.push(segment_intersection(prev, cur, prev_side, cur_side));
                    }
                    output.push(cur);
                } else if prev_in {
                    output.push(segment_intersection(prev, cur, prev_side, cur_side));
                }
            }
        }
        ConvexPolygon2D::new(output)
    }
}

fn cross(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Signed distance of `p` from the directed line `a → b` (positive on the left).
fn signed_distance(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    if len == 0.0 {
        return 0.0;
    }
    cross(a, b, p) / len
}

fn segment_intersection(p: [f64; 2], q: [f64; 2], dp: f64, dq: f64) -> [f64; 2] {
    let denom = dp - dq;
    if denom == 0.0 {
        return q;
    }
    let t = (dp / denom).clamp(0.0, 1.0);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// The box footprint on the ground plane, counter-clockwise.
pub fn bev_polygon(b: &Box3D) -> ConvexPolygon2D {
    let corners = box_corners(b);
    ConvexPolygon2D::new(corners[..4].iter().map(|c| [c[0], c[1]]).collect())
}

/// An IoU value with a flag raised when either input had no area/volume.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Overlap {
    pub iou: f64,
    pub degenerate: bool,
}

impl Overlap {
    const DEGENERATE: Overlap = Overlap {
        iou: 0.0,
        degenerate: true,
    };
}

/// Area of the intersection of the two BEV footprints.
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    // Separated bounding circles cannot overlap.
    let dx = a.cx - b.cx;
    let dy = a.cy - b.cy;
    let ra = 0.5 * (a.l * a.l + a.w * a.w).sqrt();
    let rb = 0.5 * (b.l * b.l + b.w * b.w).sqrt();
    if dx * dx + dy * dy > (ra + rb) * (ra + rb) {
        return 0.0;
    }
    bev_polygon(a).clip(&bev_polygon(b)).area()
}

pub fn rotated_bev_overlap(a: &Box3D, b: &Box3D) -> Overlap {
    if a.is_degenerate() || b.is_degenerate() {
        return Overlap::DEGENERATE;
    }
    let inter = bev_intersection_area(a, b);
    let union = a.bev_area() + b.bev_area() - inter;
    if union <= 0.0 {
        return Overlap::DEGENERATE;
    }
    Overlap {
        iou: (inter / union).clamp(0.0, 1.0),
        degenerate: false,
    }
}

/// Rotated BEV IoU in `[0, 1]`; zero for degenerate inputs.
pub fn rotated_bev_iou(a: &Box3D, b: &Box3D) -> f64 {
    rotated_bev_overlap(a, b).iou
}

pub fn overlap_3d(a: &Box3D, b: &Box3D) -> Overlap {
    if a.is_degenerate() || b.is_degenerate() {
        return Overlap::DEGENERATE;
    }
    let dz = a.z_max().min(b.z_max()) - a.z_min().max(b.z_min());
    if dz <= 0.0 {
        return Overlap {
            iou: 0.0,
            degenerate: false,
        };
    }
    let inter = bev_intersection_area(a, b) * dz;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return Overlap::DEGENERATE;
    }
    Overlap {
        iou: (inter / union).clamp(0.0, 1.0),
        degenerate: false,
    }
}

/// Full 3D IoU of two yaw-only boxes; zero for degenerate inputs.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    overlap_3d(a, b).iou
}

/// Expresses `p` in the box frame: subtract the center, rotate by `-yaw`.
#[inline]
pub fn to_box_frame(p: [f64; 3], b: &Box3D) -> [f64; 3] {
    let (s, c) = b.yaw.sin_cos();
    let dx = p[0] - b.cx;
    let dy = p[1] - b.cy;
    [c * dx + s * dy, -s * dx + c * dy, p[2] - b.cz]
}

/// Inverse of [`to_box_frame`]: rotate by `+yaw`, add the center.
#[inline]
pub fn from_box_frame(p: [f64; 3], b: &Box3D) -> [f64; 3] {
    let (s, c) = b.yaw.sin_cos();
    [
        c * p[0] - s * p[1] + b.cx,
        s * p[0] + c * p[1] + b.cy,
        p[2] + b.cz,
    ]
}

#[inline]
pub fn point_in_box(p: [f64; 3], b: &Box3D) -> bool {
    let local = to_box_frame(p, b);
    local[0].abs() <= 0.5 * b.l && local[1].abs() <= 0.5 * b.w && local[2].abs() <= 0.5 * b.h
}

/// Ascending indices of the points inside the closed box.
pub fn points_in_box(cloud: &PointCloud, b: &Box3D) -> Vec<usize> {
    cloud
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| point_in_box(p.pos(), b))
        .map(|(i, _)| i)
        .collect()
}

/// Ascending indices of the points within the closed ball.
pub fn points_in_sphere(cloud: &PointCloud, center: &Point3, radius: f64) -> Vec<usize> {
    let r2 = radius * radius;
    cloud
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            let (dx, dy, dz) = (p.x - center.x, p.y - center.y, p.z - center.z);
            dx * dx + dy * dy + dz * dz <= r2
        })
        .map(|(i, _)| i)
        .collect()
}

/// Canonical (proposal-frame) coordinates of `points`; reflectance is kept.
pub fn canonical_transform(points: &[Point3], b: &Box3D) -> Vec<Point3> {
    points
        .iter()
        .map(|p| p.with_pos(to_box_frame(p.pos(), b)))
        .collect()
}

/// Inverse of [`canonical_transform`].
pub fn uncanonical_transform(points: &[Point3], b: &Box3D) -> Vec<Point3> {
    points
        .iter()
        .map(|p| p.with_pos(from_box_frame(p.pos(), b)))
        .collect()
}

/// IoU of two discs in the plane.
pub fn disk_iou(c1: [f64; 2], r1: f64, c2: [f64; 2], r2: f64) -> f64 {
    if r1 <= 0.0 || r2 <= 0.0 {
        return 0.0;
    }
    let d = ((c1[0] - c2[0]).powi(2) + (c1[1] - c2[1]).powi(2)).sqrt();
    let a1 = PI * r1 * r1;
    let a2 = PI * r2 * r2;
    let inter = if d >= r1 + r2 {
        0.0
    } else if d <= (r1 - r2).abs() {
        a1.min(a2)
    } else {
        let alpha = ((d * d + r1 * r1 - r2 * r2) / (2.0 * d * r1)).clamp(-1.0, 1.0).acos();
        let beta = ((d * d + r2 * r2 - r1 * r1) / (2.0 * d * r2)).clamp(-1.0, 1.0).acos();
        r1 * r1 * (alpha - alpha.sin() * alpha.cos()) + r2 * r2 * (beta - beta.sin() * beta.cos())
    };
    (inter / (a1 + a2 - inter)).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;
    use std::f64::consts::FRAC_PI_4;

    fn unit() -> Box3D {
        Box3D::new([0.0; 3], [1.0; 3], 0.0).unwrap()
    }

    #[test]
    fn unit_cube_corners() {
        for c in box_corners(&unit()) {
            for v in c {
                assert_eq!(v.abs(), 0.5);
            }
        }
        let c = box_corners(&unit());
        assert_eq!(c[0], [0.5, 0.5, -0.5]);
        assert_eq!(c[6], [-0.5, -0.5, 0.5]);
    }

    #[test]
    fn yaw_pi_swaps_front_and_back() {
        let b0 = Box3D::new([1.0, 2.0, 0.0], [2.0, 1.0, 1.0], 0.0).unwrap();
        let b1 = Box3D::new([1.0, 2.0, 0.0], [2.0, 1.0, 1.0], PI).unwrap();
        let c0 = box_corners(&b0);
        let c1 = box_corners(&b1);
        // front-left of the flipped box sits where back-right was
        for (i, j) in [(0, 2), (1, 3), (2, 0), (3, 1)] {
            for axis in 0..3 {
                assert!((c1[i][axis] - c0[j][axis]).abs() < 1e-12);
                assert!((c1[i + 4][axis] - c0[j + 4][axis]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quarter_turn_swaps_extents() {
        let b = Box3D::new([0.0; 3], [2.0, 1.0, 1.0], FRAC_PI_2).unwrap();
        for c in box_corners(&b) {
            assert!((c[0].abs() - 0.5).abs() < 1e-12);
            assert!((c[1].abs() - 1.0).abs() < 1e-12);
        }
        let poly = bev_polygon(&b);
        assert!((poly.signed_area() - 2.0).abs() < 1e-12);
        for v in poly.vertices {
            assert!((v[0].abs() - 0.5).abs() < 1e-12);
            assert!((v[1].abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bev_polygon_area_is_rotation_free() {
        for yaw in [0.0, FRAC_PI_4, 1.0, -2.5] {
            let b = Box3D::new([3.0, -1.0, 0.0], [2.0, 1.0, 1.0], yaw).unwrap();
            let poly = bev_polygon(&b);
            assert_eq!(poly.vertices.len(), 4);
            assert!((poly.signed_area() - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bev_iou_cases() {
        let a = unit();
        assert!((rotated_bev_iou(&a, &a) - 1.0).abs() < 1e-12);
        let b = Box3D::new([0.5, 0.0, 0.0], [1.0; 3], 0.0).unwrap();
        assert!((rotated_bev_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        let r = Box3D::new([0.0; 3], [1.0; 3], FRAC_PI_4).unwrap();
        let inter = 2.0 * (2f64.sqrt() - 1.0);
        let expected = inter / (2.0 - inter);
        assert!((rotated_bev_iou(&a, &r) - expected).abs() < 1e-12);
        assert!((expected - 0.7071).abs() < 1e-4);
    }

    #[test]
    fn degenerate_boxes_flag() {
        let a = unit();
        let flat = Box3D::new_unchecked([0.0; 3], [1.0, 0.0, 1.0], 0.0);
        let o = rotated_bev_overlap(&a, &flat);
        assert_eq!(o.iou, 0.0);
        assert!(o.degenerate);
        assert!(overlap_3d(&flat, &a).degenerate);
        assert!(Box3D::new([0.0; 3], [1.0, 0.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn iou_3d_cases() {
        let a = unit();
        assert!((iou_3d(&a, &a) - 1.0).abs() < 1e-12);
        let above = Box3D::new([0.0, 0.0, 1.5], [1.0; 3], 0.0).unwrap();
        assert_eq!(iou_3d(&a, &above), 0.0);
        let half = Box3D::new([0.0, 0.0, 0.5], [1.0; 3], 0.0).unwrap();
        assert!((iou_3d(&a, &half) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn membership() {
        let b = Box3D::new([1.0, 1.0, 0.0], [2.0, 1.0, 1.0], 0.3).unwrap();
        let cloud = PointCloud::new(vec![
            Point3::at(1.0, 1.0, 0.0),
            Point3::at(21.0, 1.0, 0.0),
            Point3::at(1.0, 1.0, 0.5),
        ]);
        assert_eq!(points_in_box(&cloud, &b), vec![0, 2]);
        let center = Point3::at(0.0, 0.0, 0.0);
        let cloud = PointCloud::new(vec![center, Point3::at(2.0, 0.0, 0.0), Point3::at(0.0, 2.1, 0.0)]);
        assert_eq!(points_in_sphere(&cloud, &center, 2.0), vec![0, 1]);
    }

    #[test]
    fn canonical_cases() {
        let b = Box3D::new([1.0, 2.0, 3.0], [2.0, 1.0, 1.0], FRAC_PI_2).unwrap();
        let pts = canonical_transform(&[Point3::at(1.0, 2.0, 3.0), Point3::at(2.0, 2.0, 3.0)], &b);
        assert_eq!(pts[0].pos(), [0.0, 0.0, 0.0]);
        assert!((pts[1].x - 0.0).abs() < 1e-15);
        assert!((pts[1].y + 1.0).abs() < 1e-15);
        let straight = Box3D::new([1.0, 2.0, 3.0], [2.0, 1.0, 1.0], 0.0).unwrap();
        let p = canonical_transform(&[Point3::at(4.0, 4.0, 4.0)], &straight)[0];
        assert_eq!(p.pos(), [3.0, 2.0, 1.0]);
    }

    #[test]
    fn normalize_bounds() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(0.5 + 4.0 * PI) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn disk_iou_cases() {
        assert!((disk_iou([0.0, 0.0], 1.0, [0.0, 0.0], 1.0) - 1.0).abs() < 1e-12);
        assert_eq!(disk_iou([0.0, 0.0], 1.0, [3.0, 0.0], 1.0), 0.0);
        let v = disk_iou([0.0, 0.0], 1.0, [1.0, 0.0], 1.0);
        // lens area 2π/3 - √3/2
        let lens = 2.0 * PI / 3.0 - 3f64.sqrt() / 2.0;
        assert!((v - lens / (2.0 * PI - lens)).abs() < 1e-12);
    }
}
