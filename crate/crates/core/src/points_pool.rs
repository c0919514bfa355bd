//! PointsPool: turns a proposal's sparse interior points into a dense voxel
//! tensor and routes gradients back to the sampled source points.
//!
//! Forward runs in three steps:
//!
//! 1. sample `N` interior points of the proposal (with replacement when the
//!    proposal holds fewer than `N`),
//! 2. express them in canonical coordinates (center subtracted, yaw undone),
//! 3. bin them into a `d_l × d_w × d_h` grid over the box extent and keep up
//!    to `N_r` of them per voxel.
//!
//! Each occupied slot holds `[canonical xyz | point features]`. Slots within
//! a voxel are ordered by ascending source index. The layout of
//! [`PooledTensor::values`] is `(d_l, d_w, d_h, N_r, C_in + 3)` row-major.

use std::fs;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{to_box_frame, Box3D, PointCloud};
use crate::rng::seeded;

/// Number of coordinate channels prepended to every slot.
pub const COORD_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    /// Interior points sampled per proposal.
    pub n_samples: usize,
    /// Voxels along (l, w, h).
    pub grid: [usize; 3],
    /// Points kept per voxel.
    pub slots_per_voxel: usize,
    /// Width of the per-point semantic feature.
    pub feature_width: usize,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            n_samples: 512,
            grid: [6, 6, 6],
            slots_per_voxel: 35,
            feature_width: 8,
        }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.slots_per_voxel == 0 || self.grid.contains(&0) {
            return Err(Error::InvalidConfig(
                "pool sample count, slot count and grid dims must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn voxels(&self) -> usize {
        self.grid.iter().product()
    }

    pub fn channels(&self) -> usize {
        self.feature_width + COORD_CHANNELS
    }

    pub fn tensor_len(&self) -> usize {
        self.voxels() * self.slots_per_voxel * self.channels()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteriorSample {
    pub indices: Vec<usize>,
    /// Fewer than `N` interior points were available.
    pub with_replacement: bool,
    /// No interior points at all.
    pub empty: bool,
}

fn sample_from<R: rand::Rng>(interior: &[usize], n: usize, rng: &mut R) -> InteriorSample {
    if interior.is_empty() {
        return InteriorSample {
            indices: Vec::new(),
            with_replacement: false,
            empty: true,
        };
    }
    if interior.len() >= n {
        let picked = sample_indices(rng, interior.len(), n);
        InteriorSample {
            indices: picked.into_iter().map(|k| interior[k]).collect(),
            with_replacement: false,
            empty: false,
        }
    } else {
        InteriorSample {
            indices: (0..n)
                .map(|_| interior[rng.random_range(0..interior.len())])
                .collect(),
            with_replacement: true,
            empty: false,
        }
    }
}

/// Draws `n` interior point indices of `proposal`, deterministically in `seed`.
pub fn sample_interior(cloud: &PointCloud, proposal: &Box3D, n: usize, seed: u64) -> InteriorSample {
    let interior = crate::geometry::points_in_box(cloud, proposal);
    sample_from(&interior, n, &mut seeded(seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledTensor {
    pub grid: [usize; 3],
    pub slots: usize,
    pub channels: usize,
    pub values: Vec<f64>,
    /// One flag per (voxel, slot).
    pub mask: Vec<bool>,
    /// The proposal had no interior points; the tensor is all zero.
    pub empty_proposal: bool,
    /// The interior sample was drawn with replacement.
    pub resampled: bool,
}

impl PooledTensor {
    pub fn zeros(config: &PoolConfig) -> Self {
        Self {
            grid: config.grid,
            slots: config.slots_per_voxel,
            channels: config.channels(),
            values: vec![0.0; config.tensor_len()],
            mask: vec![false; config.voxels() * config.slots_per_voxel],
            empty_proposal: false,
            resampled: false,
        }
    }

    pub fn shape(&self) -> [usize; 5] {
        [self.grid[0], self.grid[1], self.grid[2], self.slots, self.channels]
    }

    pub fn voxel_index(&self, v: [usize; 3]) -> usize {
        (v[0] * self.grid[1] + v[1]) * self.grid[2] + v[2]
    }

    /// Offset of `(voxel, slot, channel 0)` in [`Self::values`].
    pub fn slot_offset(&self, voxel: usize, slot: usize) -> usize {
        (voxel * self.slots + slot) * self.channels
    }

    pub fn slot(&self, voxel: usize, slot: usize) -> &[f64] {
        let o = self.slot_offset(voxel, slot);
        &self.values[o..o + self.channels]
    }

    pub fn occupied_slots(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn voxel_occupancy(&self, voxel: usize) -> usize {
        self.mask[voxel * self.slots..(voxel + 1) * self.slots]
            .iter()
            .filter(|m| **m)
            .count()
    }

    /// Flat little-endian `f64` dump of [`Self::values`].
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

/// Source point of every occupied slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingRecord {
    pub grid: [usize; 3],
    pub slots: usize,
    pub feature_width: usize,
    pub num_points: usize,
    /// One entry per (voxel, slot); `None` for masked slots.
    pub sources: Vec<Option<usize>>,
}

impl RoutingRecord {
    pub fn tensor_len(&self) -> usize {
        self.sources.len() * (self.feature_width + COORD_CHANNELS)
    }
}

/// Voxel cell of a canonical coordinate along one axis. Intervals are
/// half-open except the last, and out-of-range values clamp to the border.
fn cell(coord: f64, extent: f64, cells: usize) -> usize {
    let t = (coord + 0.5 * extent) / extent * cells as f64;
    if t <= 0.0 {
        0
    } else {
        (t.floor() as usize).min(cells - 1)
    }
}

/// Voxel of a canonical position inside a box of `size`.
pub fn voxel_of(canonical: [f64; 3], size: [f64; 3], grid: [usize; 3]) -> [usize; 3] {
    [
        cell(canonical[0], size[0], grid[0]),
        cell(canonical[1], size[1], grid[1]),
        cell(canonical[2], size[2], grid[2]),
    ]
}

/// Pools one proposal. `features` is row-major `(num_points, feature_width)`.
pub fn pool_forward(
    cloud: &PointCloud,
    features: &[f64],
    proposal: &Box3D,
    config: &PoolConfig,
    seed: u64,
) -> Result<(PooledTensor, RoutingRecord)> {
    config.validate()?;
    let width = config.feature_width;
    if features.len() != cloud.len() * width {
        return Err(Error::LengthMismatch {
            expected: cloud.len() * width,
            actual: features.len(),
        });
    }
    let mut rng = seeded(seed);
    let interior = crate::geometry::points_in_box(cloud, proposal);
    let sample = sample_from(&interior, config.n_samples, &mut rng);

    let mut tensor = PooledTensor::zeros(config);
    tensor.empty_proposal = sample.empty;
    tensor.resampled = sample.with_replacement;
    let mut routing = RoutingRecord {
        grid: config.grid,
        slots: config.slots_per_voxel,
        feature_width: width,
        num_points: cloud.len(),
        sources: vec![None; config.voxels() * config.slots_per_voxel],
    };
    if sample.empty {
        return Ok((tensor, routing));
    }

    let size = proposal.size();
    let canonical: Vec<[f64; 3]> = sample
        .indices
        .iter()
        .map(|&i| to_box_frame(cloud.points[i].pos(), proposal))
        .collect();
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); config.voxels()];
    for (pos, c) in canonical.iter().enumerate() {
        let v = voxel_of(*c, size, config.grid);
        buckets[tensor.voxel_index(v)].push(pos);
    }

    for (voxel, bucket) in buckets.iter().enumerate() {
        if bucket.is_empty() {
            continue;
        }
        let mut chosen: Vec<usize> = if bucket.len() > config.slots_per_voxel {
            sample_indices(&mut rng, bucket.len(), config.slots_per_voxel)
                .into_iter()
                .map(|k| bucket[k])
                .collect()
        } else {
            bucket.clone()
        };
        chosen.sort_by_key(|&pos| (sample.indices[pos], pos));
        for (slot, &pos) in chosen.iter().enumerate() {
            let src = sample.indices[pos];
            let o = tensor.slot_offset(voxel, slot);
            tensor.values[o..o + COORD_CHANNELS].copy_from_slice(&canonical[pos]);
            tensor.values[o + COORD_CHANNELS..o + COORD_CHANNELS + width]
                .copy_from_slice(&features[src * width..(src + 1) * width]);
            tensor.mask[voxel * config.slots_per_voxel + slot] = true;
            routing.sources[voxel * config.slots_per_voxel + slot] = Some(src);
        }
    }
    Ok((tensor, routing))
}

/// Gradient of a scalar objective w.r.t. the point features, given its
/// gradient w.r.t. the pooled tensor. Coordinate channels are dropped and
/// unsampled points receive zero. Output is row-major `(num_points, C_in)`.
pub fn pool_backward(grad_out: &[f64], routing: &RoutingRecord) -> Result<Vec<f64>> {
    let width = routing.feature_width;
    let channels = width + COORD_CHANNELS;
    if grad_out.len() != routing.tensor_len() {
        return Err(Error::LengthMismatch {
            expected: routing.tensor_len(),
            actual: grad_out.len(),
        });
    }
    let mut grad = vec![0.0; routing.num_points * width];
    for (slot, src) in routing.sources.iter().enumerate() {
        let Some(src) = *src else { continue };
        if src >= routing.num_points {
            return Err(Error::LengthMismatch {
                expected: routing.num_points,
                actual: src + 1,
            });
        }
        let g = &grad_out[slot * channels + COORD_CHANNELS..(slot + 1) * channels];
        for (acc, v) in grad[src * width..(src + 1) * width].iter_mut().zip(g) {
            *acc += v;
        }
    }
    Ok(grad)
}

/// Permutation-invariant stand-in for a learned voxel encoder: per-voxel,
/// per-channel max over occupied slots, flattened voxel-major. Empty voxels
/// encode to zero.
pub fn reference_encoder(tensor: &PooledTensor) -> Vec<f64> {
    let voxels = tensor.grid.iter().product::<usize>();
    let mut out = vec![0.0; voxels * tensor.channels];
    for v in 0..voxels {
        let row = &mut out[v * tensor.channels..(v + 1) * tensor.channels];
        let mut any = false;
        for s in 0..tensor.slots {
            if !tensor.mask[v * tensor.slots + s] {
                continue;
            }
            let vals = tensor.slot(v, s);
            if !any {
                row.copy_from_slice(vals);
                any = true;
            } else {
                for (r, x) in row.iter_mut().zip(vals) {
                    *r = r.max(*x);
                }
            }
        }
    }
    out
}

/// JSON sidecar accompanying the raw tensor dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledSidecar {
    pub shape: [usize; 5],
    pub dtype: String,
    pub byte_order: String,
    pub mask: Vec<u8>,
    pub routing: Vec<Option<usize>>,
    pub num_points: usize,
    pub empty_proposal: bool,
    pub resampled: bool,
}

pub fn sidecar(tensor: &PooledTensor, routing: &RoutingRecord) -> PooledSidecar {
    PooledSidecar {
        shape: tensor.shape(),
        dtype: "f64".into(),
        byte_order: "little".into(),
        mask: tensor.mask.iter().map(|m| *m as u8).collect(),
        routing: routing.sources.clone(),
        num_points: routing.num_points,
        empty_proposal: tensor.empty_proposal,
        resampled: tensor.resampled,
    }
}

/// Writes `<stem>.bin` (values) and `<stem>.json` (sidecar).
pub fn write_pooled(dir: &Path, stem: &str, tensor: &PooledTensor, routing: &RoutingRecord) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bin = dir.join(format!("{stem}.bin"));
    fs::write(&bin, tensor.to_le_bytes()).map_err(|e| Error::io(&bin, e))?;
    let json = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(&sidecar(tensor, routing)).expect("sidecar serializes");
    fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    Ok(())
}

pub fn read_pooled(dir: &Path, stem: &str) -> Result<(PooledTensor, RoutingRecord)> {
    let json = dir.join(format!("{stem}.json"));
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let side: PooledSidecar = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: json.clone(),
        source,
    })?;
    let bin = dir.join(format!("{stem}.bin"));
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let expected = side.shape.iter().product::<usize>() * 8;
    if bytes.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let [dl, dw, dh, slots, channels] = side.shape;
    let tensor = PooledTensor {
        grid: [dl, dw, dh],
        slots,
        channels,
        values,
        mask: side.mask.iter().map(|m| *m != 0).collect(),
        empty_proposal: side.empty_proposal,
        resampled: side.resampled,
    };
    let routing = RoutingRecord {
        grid: [dl, dw, dh],
        slots,
        feature_width: channels - COORD_CHANNELS,
        num_points: side.num_points,
        sources: side.routing,
    };
    Ok((tensor, routing))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;

    fn cfg(width: usize) -> PoolConfig {
        PoolConfig {
            feature_width: width,
            ..PoolConfig::default()
        }
    }

    #[test]
    fn sampling_rules() {
        let proposal = Box3D::new([0.0; 3], [2.0; 3], 0.4).unwrap();
        let pts: Vec<Point3> = (0..600)
            .map(|i| Point3::at(0.001 * i as f64 - 0.3, 0.0005 * i as f64 - 0.15, 0.0))
            .collect();
        let cloud = PointCloud::new(pts);
        let s = sample_interior(&cloud, &proposal, 512, 5);
        assert_eq!(s.indices.len(), 512);
        let mut u = s.indices.clone();
        u.sort_unstable();
        u.dedup();
        assert_eq!(u.len(), 512);
        assert!(!s.with_replacement);
        assert_eq!(s, sample_interior(&cloud, &proposal, 512, 5));

        let small = PointCloud::new(cloud.points[..10].to_vec());
        let s = sample_interior(&small, &proposal, 512, 5);
        assert_eq!(s.indices.len(), 512);
        assert!(s.with_replacement);
        assert!(s.indices.iter().all(|i| *i < 10));

        let far = Box3D::new([50.0, 0.0, 0.0], [1.0; 3], 0.0).unwrap();
        let s = sample_interior(&cloud, &far, 512, 5);
        assert!(s.empty && s.indices.is_empty());
    }

    #[test]
    fn center_point_lands_in_central_region() {
        let proposal = Box3D::new([3.0, -2.0, 1.0], [4.0, 2.0, 1.5], 2.1).unwrap();
        let cloud = PointCloud::new(vec![Point3::at(3.0, -2.0, 1.0)]);
        let (t, r) = pool_forward(&cloud, &[1.0, 2.0], &proposal, &cfg(2), 0).unwrap();
        // a lone point is resampled with replacement, so every slot repeats it
        assert_eq!(t.occupied_slots(), 35);
        assert!(t.resampled);
        // exact center sits on the lower corner of voxel (3, 3, 3)
        let v = t.voxel_index([3, 3, 3]);
        assert!(t.mask[v * t.slots]);
        let slot = t.slot(v, 0);
        assert!(slot[..3].iter().all(|c| c.abs() < 1e-12));
        assert_eq!(&slot[3..], &[1.0, 2.0]);
        assert_eq!(r.sources[v * t.slots], Some(0));
    }

    #[test]
    fn zero_features_only_fill_coordinates() {
        let proposal = Box3D::new([0.0; 3], [2.0; 3], 0.0).unwrap();
        let cloud = PointCloud::new(vec![Point3::at(0.5, 0.5, 0.5), Point3::at(-0.2, 0.1, 0.3)]);
        let (t, _) = pool_forward(&cloud, &[0.0; 6], &proposal, &cfg(3), 1).unwrap();
        for (k, v) in t.values.iter().enumerate() {
            if k % t.channels >= 3 {
                assert_eq!(*v, 0.0);
            }
        }
        assert!(t.values.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn empty_proposal_is_flagged() {
        let proposal = Box3D::new([10.0, 0.0, 0.0], [2.0; 3], 0.0).unwrap();
        let cloud = PointCloud::new(vec![Point3::at(0.0, 0.0, 0.0)]);
        let (t, r) = pool_forward(&cloud, &[1.0], &proposal, &cfg(1), 1).unwrap();
        assert!(t.empty_proposal);
        assert!(t.values.iter().all(|v| *v == 0.0));
        assert!(r.sources.iter().all(Option::is_none));
    }

    #[test]
    fn feature_length_checked() {
        let proposal = Box3D::new([0.0; 3], [2.0; 3], 0.0).unwrap();
        let cloud = PointCloud::new(vec![Point3::at(0.0, 0.0, 0.0)]);
        assert!(pool_forward(&cloud, &[1.0, 2.0], &proposal, &cfg(1), 1).is_err());
    }

    #[test]
    fn backward_routes_single_slot() {
        let c = cfg(4);
        let mut routing = RoutingRecord {
            grid: c.grid,
            slots: c.slots_per_voxel,
            feature_width: 4,
            num_points: 10,
            sources: vec![None; c.voxels() * c.slots_per_voxel],
        };
        routing.sources[17] = Some(7);
        let mut grad = vec![0.0; c.tensor_len()];
        assert!(pool_backward(&grad, &routing).unwrap().iter().all(|g| *g == 0.0));
        grad[17 * c.channels() + 3 + 2] = 1.0;
        // coordinate channel gradients are not routed
        grad[17 * c.channels()] = 5.0;
        let g = pool_backward(&grad, &routing).unwrap();
        for (k, v) in g.iter().enumerate() {
            assert_eq!(*v, if k == 7 * 4 + 2 { 1.0 } else { 0.0 });
        }
        assert!(pool_backward(&grad[1..], &routing).is_err());
    }

    #[test]
    fn encoder_cases() {
        let c = cfg(2);
        let mut t = PooledTensor::zeros(&c);
        assert!(reference_encoder(&t).iter().all(|v| *v == 0.0));
        let v = t.voxel_index([1, 2, 3]);
        let a = [0.1, -0.2, 0.3, 5.0, -1.0];
        let b = [-0.1, 0.2, 0.0, 2.0, -3.0];
        for (s, vals) in [a, b].iter().enumerate() {
            let o = t.slot_offset(v, s);
            t.values[o..o + 5].copy_from_slice(vals);
            t.mask[v * t.slots + s] = true;
        }
        let enc = reference_encoder(&t);
        assert_eq!(&enc[v * 5..v * 5 + 5], &[0.1, 0.2, 0.3, 5.0, -1.0]);
        // a duplicate slot changes nothing
        let o = t.slot_offset(v, 2);
        t.values[o..o + 5].copy_from_slice(&a);
        t.mask[v * t.slots + 2] = true;
        assert_eq!(reference_encoder(&t), enc);
    }

    #[test]
    fn cell_boundaries() {
        assert_eq!(cell(-1.0, 2.0, 6), 0);
        assert_eq!(cell(1.0, 2.0, 6), 5);
        assert_eq!(cell(1.0 + 1e-12, 2.0, 6), 5);
        assert_eq!(cell(-1.0 - 1e-12, 2.0, 6), 0);
        assert_eq!(cell(0.0, 2.0, 6), 3);
    }
}
