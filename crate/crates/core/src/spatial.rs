//! Uniform hash grid for ball and box queries over a fixed cloud.

use std::collections::HashMap;

use crate::geometry::{point_in_box, Box3D, Point3, PointCloud};

pub struct PointGrid<'a> {
    cloud: &'a PointCloud,
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> PointGrid<'a> {
    pub fn new(cloud: &'a PointCloud, cell: f64) -> Self {
        assert!(cell > 0.0, "grid cell size must be positive");
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in cloud.points.iter().enumerate() {
            cells.entry(key(p.pos(), cell)).or_default().push(i);
        }
        Self { cloud, cell, cells }
    }

    pub fn cloud(&self) -> &PointCloud {
        self.cloud
    }

    fn candidates(&self, lo: [f64; 3], hi: [f64; 3], out: &mut Vec<usize>) {
        let a = key(lo, self.cell);
        let b = key(hi, self.cell);
        for x in a[0]..=b[0] {
            for y in a[1]..=b[1] {
                for z in a[2]..=b[2] {
                    if let Some(v) = self.cells.get(&[x, y, z]) {
                        out.extend_from_slice(v);
                    }
                }
            }
        }
    }

    /// Same result as [`crate::geometry::points_in_sphere`], sorted ascending.
    pub fn in_sphere(&self, center: &Point3, radius: f64) -> Vec<usize> {
        let c = center.pos();
        let mut cand = Vec::new();
        self.candidates(
            [c[0] - radius, c[1] - radius, c[2] - radius],
            [c[0] + radius, c[1] + radius, c[2] + radius],
            &mut cand,
        );
        let r2 = radius * radius;
        let mut out: Vec<usize> = cand
            .into_iter()
            .filter(|&i| {
                let p = &self.cloud.points[i];
                let (dx, dy, dz) = (p.x - center.x, p.y - center.y, p.z - center.z);
                dx * dx + dy * dy + dz * dz <= r2
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Same result as [`crate::geometry::points_in_box`], sorted ascending.
    pub fn in_box(&self, b: &Box3D) -> Vec<usize> {
        let r = 0.5 * (b.l * b.l + b.w * b.w).sqrt();
        let mut cand = Vec::new();
        self.candidates(
            [b.cx - r, b.cy - r, b.z_min()],
            [b.cx + r, b.cy + r, b.z_max()],
            &mut cand,
        );
        let mut out: Vec<usize> = cand
            .into_iter()
            .filter(|&i| point_in_box(self.cloud.points[i].pos(), b))
            .collect();
        out.sort_unstable();
        out
    }
}

fn key(p: [f64; 3], cell: f64) -> [i64; 3] {
    [
        (p[0] / cell).floor() as i64,
        (p[1] / cell).floor() as i64,
        (p[2] / cell).floor() as i64,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{points_in_box, points_in_sphere};
    use crate::rng::seeded;
    use rand::Rng;

    #[test]
    fn grid_matches_linear_scan() {
        let mut rng = seeded(11);
        let cloud = PointCloud::new(
            (0..2000)
                .map(|_| {
                    Point3::at(
                        rng.random_range(-10.0..10.0),
                        rng.random_range(-10.0..10.0),
                        rng.random_range(-2.0..2.0),
                    )
                })
                .collect(),
        );
        let grid = PointGrid::new(&cloud, 1.3);
        for i in 0..50 {
            let c = cloud.points[i * 7];
            assert_eq!(grid.in_sphere(&c, 2.0), points_in_sphere(&cloud, &c, 2.0));
            let b = Box3D::new(c.pos(), [3.9, 1.6, 1.6], i as f64 * 0.37).unwrap();
            assert_eq!(grid.in_box(&b), points_in_box(&cloud, &b));
        }
    }
}
