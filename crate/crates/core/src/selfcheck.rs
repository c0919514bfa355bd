//! Oracle suites run by the `selfcheck` command: Monte-Carlo IoU agreement,
//! finite-difference gradients, the pooling adjoint and equivariance tests,
//! and encode/decode and file-format round-trips.

use std::f64::consts::PI;
use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::{decode_box_targets, encode_box_targets, points_iou};
use crate::dataio::kitti::{
    box_to_label, camera_to_internal, format_labels, parse_labels, parse_velodyne, write_velodyne, Calib, KittiLabel,
};
use crate::error::{Error, Result};
use crate::geometry::{iou_3d, normalize_angle, points_in_box, rotated_bev_iou, Box3D, Point3, PointCloud};
use crate::losses::{
    box_loss, corner_loss_with, focal_loss, iou_branch_loss, proposal_loss, smooth_l1, softmax_ce, AnchorPrediction, BoxPrediction,
    CornerMatching, LossConfig, LossValue, ProposalBatch,
};
use crate::points_pool::{pool_backward, pool_forward, PoolConfig, COORD_CHANNELS};
use crate::rng::{derive_seed, seeded, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfcheckConfig {
    /// Filled from the run seed, not from config files.
    #[serde(skip)]
    pub seed: u64,
    pub iou_pairs: usize,
    /// Strata per axis of the Monte-Carlo IoU estimate; samples = grid².
    pub mc_grid: usize,
    pub iou_tolerance: f64,
    pub closed_form_cases: usize,
    pub closed_form_tolerance: f64,
    pub gradient_cases: usize,
    pub fd_step: f64,
    pub gradient_tolerance: f64,
    pub adjoint_tolerance: f64,
    pub equivariance_tolerance: f64,
    pub pool_cases: usize,
    pub roundtrip_cases: usize,
    pub roundtrip_tolerance: f64,
    pub label_cases: usize,
    pub label_tolerance: f64,
    pub points_iou_cases: usize,
}

impl Default for SelfcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            iou_pairs: 200,
            mc_grid: 320,
            iou_tolerance: 2e-3,
            closed_form_cases: 1000,
            closed_form_tolerance: 1e-12,
            gradient_cases: 40,
            fd_step: 1e-6,
            gradient_tolerance: 1e-6,
            adjoint_tolerance: 1e-10,
            equivariance_tolerance: 1e-9,
            pool_cases: 8,
            roundtrip_cases: 10_000,
            roundtrip_tolerance: 1e-12,
            label_cases: 100,
            label_tolerance: 1e-9,
            points_iou_cases: 1000,
        }
    }
}

impl SelfcheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_grid < 2 || !(self.fd_step > 0.0) {
            return Err(Error::InvalidConfig("need mc_grid >= 2 and fd_step > 0".into()));
        }
        let tols = [
            self.iou_tolerance,
            self.closed_form_tolerance,
            self.gradient_tolerance,
            self.adjoint_tolerance,
            self.equivariance_tolerance,
            self.roundtrip_tolerance,
            self.label_tolerance,
        ];
        if tols.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::InvalidConfig("tolerances must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl CheckResult {
    fn new(name: &str, cases: usize, max_error: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            // NaN errors fail
            passed: max_error <= tolerance,
            cases,
            max_error,
            tolerance,
            seconds: 0.0,
            detail: None,
        }
    }

    fn with_detail(mut self, detail: String) -> Self {
        self.detail = Some(detail);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfcheckReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl SelfcheckReport {
    pub fn failed(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }
}

fn timed(f: impl FnOnce() -> CheckResult) -> CheckResult {
    let t = Instant::now();
    let mut r = f();
    r.seconds = t.elapsed().as_secs_f64();
    r
}

/// `|a - b| / max(1, |a|, |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

fn worst(errors: impl IntoIterator<Item = f64>) -> f64 {
    errors.into_iter().fold(0.0, |m, e| if e.is_nan() || m.is_nan() { f64::NAN } else { m.max(e) })
}

/// A box pair whose BEV footprints usually overlap.
pub fn random_box_pair(rng: &mut Rng) -> (Box3D, Box3D) {
    let draw = |rng: &mut Rng, spread: f64| {
        Box3D::new_unchecked(
            [
                rng.random_range(-spread..=spread),
                rng.random_range(-spread..=spread),
                rng.random_range(-0.5..=0.5),
            ],
            [rng.random_range(0.3..5.0), rng.random_range(0.3..3.0), rng.random_range(0.5..2.0)],
            rng.random_range(-PI..PI),
        )
    };
    let a = draw(rng, 0.0);
    let b = draw(rng, 2.0);
    (a, b)
}

fn inside_rect(p: [f64; 2], b: &Box3D) -> bool {
    let (s, c) = b.yaw.sin_cos();
    let (dx, dy) = (p[0] - b.cx, p[1] - b.cy);
    let u = c * dx + s * dy;
    let v = -s * dx + c * dy;
    u.abs() <= 0.5 * b.l && v.abs() <= 0.5 * b.w
}

fn rect_bounds(b: &Box3D) -> [f64; 4] {
    let (s, c) = b.yaw.sin_cos();
    let ex = 0.5 * (b.l * c.abs() + b.w * s.abs());
    let ey = 0.5 * (b.l * s.abs() + b.w * c.abs());
    [b.cx - ex, b.cy - ey, b.cx + ex, b.cy + ey]
}

/// BEV IoU estimated by jittered stratified sampling over the union's
/// bounding rectangle, `grid²` samples.
pub fn monte_carlo_bev_iou(a: &Box3D, b: &Box3D, grid: usize, rng: &mut Rng) -> f64 {
    let (ra, rb) = (rect_bounds(a), rect_bounds(b));
    let x0 = ra[0].min(rb[0]);
    let y0 = ra[1].min(rb[1]);
    let dx = (ra[2].max(rb[2]) - x0) / grid as f64;
    let dy = (ra[3].max(rb[3]) - y0) / grid as f64;
    let (mut both, mut either) = (0u64, 0u64);
    for i in 0..grid {
        for j in 0..grid {
            let p = [
                x0 + (i as f64 + rng.random::<f64>()) * dx,
                y0 + (j as f64 + rng.random::<f64>()) * dy,
            ];
            let (ia, ib) = (inside_rect(p, a), inside_rect(p, b));
            both += (ia && ib) as u64;
            either += (ia || ib) as u64;
        }
    }
    if either == 0 {
        0.0
    } else {
        both as f64 / either as f64
    }
}

/// Largest disagreement between `iou` and the Monte-Carlo estimate over
/// random box pairs. Generic so a deliberately broken IoU can be checked.
pub fn monte_carlo_iou_check<F>(iou: F, config: &SelfcheckConfig) -> CheckResult
where
    F: Fn(&Box3D, &Box3D) -> f64 + Sync,
{
    let errors: Vec<f64> = (0..config.iou_pairs)
        .into_par_iter()
        .map(|k| {
            let mut rng = seeded(derive_seed(config.seed, 1000 + k as u64));
            let (a, b) = random_box_pair(&mut rng);
            (iou(&a, &b) - monte_carlo_bev_iou(&a, &b, config.mc_grid, &mut rng)).abs()
        })
        .collect();
    CheckResult::new("bev_iou_monte_carlo", errors.len(), worst(errors), config.iou_tolerance)
        .with_detail(format!("{} samples per pair", config.mc_grid * config.mc_grid))
}

/// Axis-aligned pairs (yaw 0 or π/2) against the product of interval overlaps.
pub fn closed_form_iou_check(config: &SelfcheckConfig) -> CheckResult {
    let mut rng = seeded(derive_seed(config.seed, 2));
    let overlap = |a0: f64, a1: f64, b0: f64, b1: f64| (a1.min(b1) - a0.max(b0)).max(0.0);
    let mut errors = Vec::with_capacity(2 * config.closed_form_cases);
    for _ in 0..config.closed_form_cases {
        let (mut a, mut b) = random_box_pair(&mut rng);
        a.yaw = 0.0;
        b.yaw = if rng.random_bool(0.5) { 0.0 } else { PI / 2.0 };
        let [ax0, ay0, ax1, ay1] = [a.cx - a.l / 2.0, a.cy - a.w / 2.0, a.cx + a.l / 2.0, a.cy + a.w / 2.0];
        let (bl, bw) = if b.yaw == 0.0 { (b.l, b.w) } else { (b.w, b.l) };
        let [bx0, by0, bx1, by1] = [b.cx - bl / 2.0, b.cy - bw / 2.0, b.cx + bl / 2.0, b.cy + bw / 2.0];
        let inter = overlap(ax0, ax1, bx0, bx1) * overlap(ay0, ay1, by0, by1);
        let bev = inter / (a.l * a.w + b.l * b.w - inter);
        errors.push((rotated_bev_iou(&a, &b) - bev).abs());
        let inter3 = inter * overlap(a.z_min(), a.z_max(), b.z_min(), b.z_max());
        let iou3 = inter3 / (a.volume() + b.volume() - inter3);
        errors.push((iou_3d(&a, &b) - iou3).abs());
    }
    CheckResult::new("iou_axis_aligned_closed_form", errors.len(), worst(errors), config.closed_form_tolerance)
}

/// Central differences of `f` at `x`.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + h;
            let up = f(&y);
            y[i] = x[i] - h;
            let down = f(&y);
            y[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest relative error between an analytic gradient and central
/// differences of the value.
pub fn gradient_error(f: impl Fn(&[f64]) -> LossValue, x: &[f64], h: f64) -> f64 {
    let analytic = f(x).gradient;
    let numeric = finite_difference(|y| f(y).value, x, h);
    assert_eq!(analytic.len(), numeric.len(), "gradient length");
    worst(analytic.iter().zip(&numeric).map(|(a, n)| relative_error(*a, *n)))
}

fn boxes_from(x: &[f64]) -> Box3D {
    Box3D::new_unchecked([x[0], x[1], x[2]], [x[3], x[4], x[5]], x[6])
}

/// A value not within `margin` of `±delta`, the smooth-L1 kinks.
fn off_kink(rng: &mut Rng, delta: f64, margin: f64) -> f64 {
    loop {
        let v: f64 = rng.random_range(-3.0..3.0);
        if (v.abs() - delta).abs() > margin {
            return v;
        }
    }
}

fn random_logits(rng: &mut Rng, n: usize) -> Vec<f64> {
    // distinct enough that the argmax is stable under the FD step
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut s = v.clone();
        s.sort_by(|a, b| b.total_cmp(a));
        if s[0] - s[1] > 1e-3 {
            return v;
        }
    }
}

/// Central-difference checks of every loss and its gradient.
pub fn loss_gradient_check(config: &SelfcheckConfig, loss: &LossConfig) -> Vec<CheckResult> {
    let h = config.fd_step;
    let cfg = *loss;
    let mut rng = seeded(derive_seed(config.seed, 3));
    let n = config.gradient_cases;
    let mut results = Vec::new();
    let mut record = |name: &str, errs: Vec<f64>| {
        results.push(CheckResult::new(name, errs.len(), worst(errs), config.gradient_tolerance));
    };

    let errs = (0..n)
        .map(|_| {
            let target: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x: Vec<f64> = target.iter().map(|t| t + off_kink(&mut rng, cfg.delta, 1e-3)).collect();
            gradient_error(|y| smooth_l1(y, &target, cfg.delta).unwrap(), &x, h)
        })
        .collect();
    record("grad_smooth_l1", errs);

    let errs = (0..n)
        .map(|_| {
            let p = rng.random_range(0.02..0.98);
            gradient_error(|y| focal_loss(y[0], cfg.focal_alpha, cfg.focal_gamma), &[p], h)
        })
        .collect();
    record("grad_focal", errs);

    let errs = (0..n)
        .map(|_| {
            let logits: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let label = rng.random_range(0..4);
            gradient_error(|y| softmax_ce(y, label).unwrap(), &logits, h)
        })
        .collect();
    record("grad_softmax_ce", errs);

    for (name, matching) in [("grad_corner_direct", CornerMatching::Direct), ("grad_corner_flip_min", CornerMatching::FlipMin)] {
        let errs = (0..n)
            .map(|_| {
                let (_, gt) = random_box_pair(&mut rng);
                let mut x = vec![gt.cx, gt.cy, gt.cz, gt.l, gt.w, gt.h, gt.yaw];
                for (k, v) in x.iter_mut().enumerate() {
                    *v += if k < 3 { rng.random_range(-0.8..0.8) } else if k < 6 { rng.random_range(-0.2..0.2) } else { rng.random_range(-0.5..0.5) };
                }
                gradient_error(|y| corner_loss_with(&boxes_from(y), &gt, matching), &x, h)
            })
            .collect();
        record(name, errs);
    }

    let errs = (0..n)
        .map(|_| {
            let (p, g) = random_box_pair(&mut rng);
            let x = [iou_3d(&p, &g) + off_kink(&mut rng, cfg.delta, 1e-3)];
            gradient_error(|y| iou_branch_loss(y[0], &p, Some(&g), cfg.delta).unwrap(), &x, h)
        })
        .collect();
    record("grad_iou_branch", errs);

    let errs = (0..n / 4 + 1)
        .map(|_| {
            let (batch, x) = random_proposal_batch(&mut rng, &cfg);
            gradient_error(|y| proposal_loss(&with_proposal_params(&batch, y), &cfg).unwrap(), &x, h)
        })
        .collect();
    record("grad_proposal_loss", errs);

    let errs = (0..n / 4 + 1)
        .map(|_| {
            let (batch, x) = random_box_batch(&mut rng, &cfg);
            gradient_error(|y| box_loss(&with_box_params(&batch, y), &cfg).unwrap(), &x, h)
        })
        .collect();
    record("grad_box_loss", errs);

    let focal = focal_loss(0.5, 0.25, 2.0).value;
    results.push(CheckResult::new("focal_reference_value", 1, (focal - 0.0625 * 2f64.ln()).abs(), 1e-12));
    results
}

fn random_proposal_batch(rng: &mut Rng, cfg: &LossConfig) -> (ProposalBatch, Vec<f64>) {
    let seg_probs: Vec<f64> = (0..5).map(|_| rng.random_range(0.05..0.95)).collect();
    let anchors: Vec<AnchorPrediction> = (0..4)
        .map(|k| {
            let label = if k < 2 { 1 } else { 0 };
            let (a, g) = random_box_pair(rng);
            let target = encode_box_targets(a.center(), a.size(), &g, cfg.angle_bins).unwrap();
            let near = |rng: &mut Rng, t: f64| t + off_kink(rng, cfg.delta, 1e-3);
            AnchorPrediction {
                cls_logits: (0..2).map(|_| rng.random_range(-2.0..2.0)).collect(),
                label,
                center: std::array::from_fn(|i| near(rng, target.center[i])),
                size: std::array::from_fn(|i| near(rng, target.size[i])),
                angle_logits: (0..cfg.angle_bins).map(|_| rng.random_range(-2.0..2.0)).collect(),
                angle_residual: near(rng, target.angle_residual),
                target: Some(target),
            }
        })
        .collect();
    let batch = ProposalBatch { seg_probs, anchors };
    let mut x = batch.seg_probs.clone();
    for a in &batch.anchors {
        x.extend(&a.cls_logits);
        x.extend(a.center);
        x.extend(a.size);
        x.extend(&a.angle_logits);
        x.push(a.angle_residual);
    }
    (batch, x)
}

fn with_proposal_params(batch: &ProposalBatch, x: &[f64]) -> ProposalBatch {
    let mut b = batch.clone();
    let mut i = b.seg_probs.len();
    b.seg_probs.copy_from_slice(&x[..i]);
    for a in &mut b.anchors {
        let mut take = |n: usize| {
            let s = &x[i..i + n];
            i += n;
            s
        };
        let nc = a.cls_logits.len();
        a.cls_logits.copy_from_slice(take(nc));
        a.center.copy_from_slice(take(3));
        a.size.copy_from_slice(take(3));
        let na = a.angle_logits.len();
        a.angle_logits.copy_from_slice(take(na));
        a.angle_residual = take(1)[0];
    }
    b
}

fn random_box_batch(rng: &mut Rng, cfg: &LossConfig) -> (Vec<BoxPrediction>, Vec<f64>) {
    let batch: Vec<BoxPrediction> = (0..4)
        .map(|k| {
            let (p, g) = random_box_pair(rng);
            let near = |rng: &mut Rng, t: f64| t + off_kink(rng, cfg.delta, 1e-3);
            let t = encode_box_targets(p.center(), p.size(), &g, cfg.angle_bins).unwrap();
            BoxPrediction {
                proposal: p,
                cls_logits: (0..2).map(|_| rng.random_range(-2.0..2.0)).collect(),
                label: if k < 3 { 1 } else { 0 },
                center_shift: std::array::from_fn(|i| t.center[i] + rng.random_range(-0.5..0.5)),
                size_residual: std::array::from_fn(|i| t.size[i] + rng.random_range(-0.2..0.2)),
                angle_logits: random_logits(rng, cfg.angle_bins),
                angle_residual: t.angle_residual + rng.random_range(-0.2..0.2),
                predicted_iou: near(rng, iou_3d(&p, &g)),
                gt: (k < 3).then_some(g),
            }
        })
        .collect();
    let mut x = Vec::new();
    for b in &batch {
        x.extend(&b.cls_logits);
        x.extend(b.center_shift);
        x.extend(b.size_residual);
        x.extend(&b.angle_logits);
        x.push(b.angle_residual);
        x.push(b.predicted_iou);
    }
    (batch, x)
}

fn with_box_params(batch: &[BoxPrediction], x: &[f64]) -> Vec<BoxPrediction> {
    let mut out = batch.to_vec();
    let mut i = 0;
    for b in &mut out {
        let mut take = |n: usize| {
            let s = &x[i..i + n];
            i += n;
            s
        };
        let nc = b.cls_logits.len();
        b.cls_logits.copy_from_slice(take(nc));
        b.center_shift.copy_from_slice(take(3));
        b.size_residual.copy_from_slice(take(3));
        let na = b.angle_logits.len();
        b.angle_logits.copy_from_slice(take(na));
        b.angle_residual = take(1)[0];
        b.predicted_iou = take(1)[0];
    }
    out
}

/// A cloud with exactly `inside` points strictly inside `proposal` and
/// `outside` points around it.
pub fn pool_fixture(rng: &mut Rng, proposal: &Box3D, inside: usize, outside: usize) -> PointCloud {
    let mut points = Vec::with_capacity(inside + outside);
    for _ in 0..inside {
        let local = [
            rng.random_range(-0.49..0.49) * proposal.l,
            rng.random_range(-0.49..0.49) * proposal.w,
            rng.random_range(-0.49..0.49) * proposal.h,
        ];
        let p = crate::geometry::from_box_frame(local, proposal);
        points.push(Point3::new(p[0], p[1], p[2], rng.random()));
    }
    while points.len() < inside + outside {
        let p = [
            proposal.cx + rng.random_range(-2.0..2.0) * proposal.l,
            proposal.cy + rng.random_range(-2.0..2.0) * proposal.w,
            proposal.cz + rng.random_range(-2.0..2.0) * proposal.h,
        ];
        if !crate::geometry::point_in_box(p, proposal) {
            points.push(Point3::new(p[0], p[1], p[2], rng.random()));
        }
    }
    PointCloud::new(points)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Adjoint, finite-difference and rigid-motion checks of the pooling layer,
/// plus the sampling constants on a 600-point proposal.
pub fn pool_checks(config: &SelfcheckConfig) -> Result<Vec<CheckResult>> {
    let pool = PoolConfig::default();
    let width = pool.feature_width;
    let (mut adj, mut fd, mut eq) = (Vec::new(), Vec::new(), Vec::new());
    let mut layout_ok = true;
    for case in 0..config.pool_cases {
        let mut rng = seeded(derive_seed(config.seed, 4000 + case as u64));
        let proposal = Box3D::new_unchecked(
            [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-2.0..0.0)],
            [rng.random_range(3.0..5.0), rng.random_range(1.5..2.0), rng.random_range(1.4..1.8)],
            rng.random_range(-PI..PI),
        );
        // alternate dense and sparse proposals so resampling is covered
        let inside = if case % 2 == 0 { 600 } else { 40 };
        let cloud = pool_fixture(&mut rng, &proposal, inside, 300);
        let u: Vec<f64> = (0..cloud.len() * width).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pool_seed = rng.random();
        let (fu, routing) = pool_forward(&cloud, &u, &proposal, &pool, pool_seed)?;
        let (f0, _) = pool_forward(&cloud, &vec![0.0; u.len()], &proposal, &pool, pool_seed)?;
        let v: Vec<f64> = (0..fu.values.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ftv = pool_backward(&v, &routing)?;
        // coordinate channels do not depend on the features, so compare
        // the linear part F(u) - F(0)
        let lhs: f64 = fu.values.iter().zip(&f0.values).zip(&v).map(|((a, b), w)| (a - b) * w).sum();
        let rhs = dot(&u, &ftv);
        adj.push((lhs - rhs).abs() / 1f64.max(lhs.abs()));

        let probe: Vec<usize> = (0..64).map(|_| rng.random_range(0..u.len())).collect();
        let objective = |x: &[f64]| -> f64 {
            let (t, _) = pool_forward(&cloud, x, &proposal, &pool, pool_seed).expect("valid pool input");
            dot(&t.values, &v)
        };
        let h = config.fd_step;
        let mut y = u.clone();
        for &i in &probe {
            y[i] = u[i] + h;
            let up = objective(&y);
            y[i] = u[i] - h;
            let down = objective(&y);
            y[i] = u[i];
            fd.push(relative_error((up - down) / (2.0 * h), ftv[i]));
        }

        let yaw = rng.random_range(-PI..PI);
        let shift = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-1.0..1.0)];
        let (s, c) = yaw.sin_cos();
        let moved = PointCloud::new(
            cloud
                .points
                .iter()
                .map(|p| Point3::new(c * p.x - s * p.y + shift[0], s * p.x + c * p.y + shift[1], p.z + shift[2], p.reflectance))
                .collect(),
        );
        let moved_box = proposal.transformed(yaw, shift);
        let (fm, _) = pool_forward(&moved, &u, &moved_box, &pool, pool_seed)?;
        eq.push(if fm.mask == fu.mask {
            worst(fm.values.iter().zip(&fu.values).map(|(a, b)| (a - b).abs()))
        } else {
            f64::INFINITY
        });

        if inside == 600 {
            let voxels = pool.voxels();
            let max_slots = (0..voxels).map(|v| fu.voxel_occupancy(v)).max().unwrap_or(0);
            let interior = points_in_box(&cloud, &proposal).len();
            layout_ok &= interior == 600
                && !fu.resampled
                && fu.occupied_slots() <= pool.n_samples
                && fu.shape() == [6, 6, 6, 35, width + COORD_CHANNELS]
                && max_slots <= 35
                && fu.occupied_slots() == (0..voxels).map(|v| fu.voxel_occupancy(v)).sum::<usize>();
        }
    }
    Ok(vec![
        CheckResult::new("pool_adjoint", adj.len(), worst(adj), config.adjoint_tolerance),
        CheckResult::new("pool_finite_difference", fd.len(), worst(fd), config.gradient_tolerance),
        CheckResult::new("pool_rigid_equivariance", eq.len(), worst(eq), config.equivariance_tolerance),
        CheckResult::new("pool_layout", 1, if layout_ok { 0.0 } else { 1.0 }, 0.0)
            .with_detail(format!("N={}, grid {:?}, {} slots", pool.n_samples, pool.grid, pool.slots_per_voxel)),
    ])
}

/// Target encoding followed by decoding recovers the box.
pub fn encode_decode_check(config: &SelfcheckConfig) -> CheckResult {
    let bins = LossConfig::default().angle_bins;
    let mut rng = seeded(derive_seed(config.seed, 5));
    let mut errors = Vec::with_capacity(config.roundtrip_cases);
    for _ in 0..config.roundtrip_cases {
        let center = [rng.random_range(0.0..70.0), rng.random_range(-40.0..40.0), rng.random_range(-3.0..1.0)];
        let size = [rng.random_range(0.5..5.0), rng.random_range(0.5..2.5), rng.random_range(0.5..2.0)];
        let (_, mut gt) = random_box_pair(&mut rng);
        gt.cx += center[0];
        gt.cy += center[1];
        let Ok(t) = encode_box_targets(center, size, &gt, bins) else {
            errors.push(f64::INFINITY);
            continue;
        };
        let Ok(d) = decode_box_targets(center, size, &t, bins) else {
            errors.push(f64::INFINITY);
            continue;
        };
        let b = d.bbox;
        let e = [b.cx - gt.cx, b.cy - gt.cy, b.cz - gt.cz, b.l - gt.l, b.w - gt.w, b.h - gt.h, normalize_angle(b.yaw - gt.yaw)];
        errors.push(worst(e.iter().map(|v| v.abs())));
    }
    CheckResult::new("target_encode_decode", errors.len(), worst(errors), config.roundtrip_tolerance)
}

/// A calibration with small extra rotations on top of the axis permutation
/// and a non-zero translation.
pub fn tilted_calib() -> Calib {
    let (a, b) = (0.02f64, -0.015f64);
    let rx = |t: f64| [1.0, 0.0, 0.0, 0.0, t.cos(), -t.sin(), 0.0, t.sin(), t.cos()];
    let base = Calib::axis_permutation();
    let r = rx(b);
    let tr = &base.tr_velo_to_cam;
    let mut t = [0.0; 12];
    for i in 0..3 {
        for j in 0..3 {
            t[4 * i + j] = (0..3).map(|k| r[3 * i + k] * tr[4 * k + j]).sum();
        }
    }
    t[3] = 0.27;
    t[7] = -0.08;
    t[11] = -0.3;
    Calib {
        r0_rect: rx(a),
        tr_velo_to_cam: t,
        ..base
    }
}

/// Velodyne bytes, label text and box/label conversion round-trips.
pub fn io_roundtrip_checks(config: &SelfcheckConfig) -> Result<Vec<CheckResult>> {
    let mut rng = seeded(derive_seed(config.seed, 6));
    let cloud = PointCloud::new(
        (0..2000)
            .map(|_| {
                let f = |rng: &mut Rng, r: f32| rng.random_range(-r..r) as f64;
                Point3::new(f(&mut rng, 80.0), f(&mut rng, 80.0), f(&mut rng, 3.0), f(&mut rng, 1.0).abs())
            })
            .collect(),
    );
    let bytes = write_velodyne(&cloud);
    let back = parse_velodyne(&bytes)?;
    let velo_ok = write_velodyne(&back) == bytes && back == cloud;

    let labels: Vec<KittiLabel> = (0..config.label_cases)
        .map(|_| KittiLabel {
            class_name: ["Car", "Pedestrian", "Cyclist", "Van"][rng.random_range(0..4)].into(),
            truncation: rng.random_range(0.0..1.0),
            occlusion: rng.random_range(0..=3),
            alpha: rng.random_range(-PI..PI),
            bbox: [rng.random_range(0.0..600.0), rng.random_range(0.0..180.0), rng.random_range(600.0..1200.0), rng.random_range(180.0..370.0)],
            dimensions: [rng.random_range(0.5..4.0), rng.random_range(0.3..3.0), rng.random_range(0.3..12.0)],
            location: [rng.random_range(-30.0..30.0), rng.random_range(-1.0..3.0), rng.random_range(1.0..80.0)],
            rotation_y: rng.random_range(-PI..PI),
            score: None,
        })
        .collect();
    let parsed = parse_labels(&format_labels(&labels))?;
    let label_err = if parsed.len() != labels.len() {
        f64::INFINITY
    } else {
        worst(labels.iter().zip(&parsed).map(|(a, b)| {
            let xa = [a.truncation, a.alpha, a.rotation_y].into_iter().chain(a.bbox).chain(a.dimensions).chain(a.location);
            let xb = [b.truncation, b.alpha, b.rotation_y].into_iter().chain(b.bbox).chain(b.dimensions).chain(b.location);
            let same = a.class_name == b.class_name && a.occlusion == b.occlusion;
            if same {
                worst(xa.zip(xb).map(|(x, y)| (x - y).abs()))
            } else {
                f64::INFINITY
            }
        }))
    };

    let mut conv = Vec::new();
    for calib in [Calib::axis_permutation(), tilted_calib()] {
        for _ in 0..config.label_cases {
            let (_, mut b) = random_box_pair(&mut rng);
            b.cx += rng.random_range(5.0..60.0);
            let label = box_to_label(&b, "Car", &calib, None, None)?;
            let text = format_labels(std::slice::from_ref(&label));
            let row = parse_labels(&text)?.pop().ok_or(Error::EmptyBatch)?;
            let g = camera_to_internal(&row, &calib)?.bbox;
            let e = [g.cx - b.cx, g.cy - b.cy, g.cz - b.cz, g.l - b.l, g.w - b.w, g.h - b.h, normalize_angle(g.yaw - b.yaw)];
            conv.push(worst(e.iter().map(|v| v.abs())));
        }
    }

    Ok(vec![
        CheckResult::new("velodyne_bit_exact", cloud.len(), if velo_ok { 0.0 } else { 1.0 }, 0.0),
        CheckResult::new("label_text_roundtrip", labels.len(), label_err, config.label_tolerance),
        CheckResult::new("label_box_conversion", conv.len(), worst(conv), config.label_tolerance),
    ])
}

/// The merged-walk `points_iou` against a brute-force count over the cloud.
pub fn points_iou_check(config: &SelfcheckConfig) -> CheckResult {
    let mismatches: usize = (0..config.points_iou_cases)
        .into_par_iter()
        .map(|k| {
            let mut rng = seeded(derive_seed(config.seed, 7000 + k as u64));
            let (a, b) = random_box_pair(&mut rng);
            let cloud = PointCloud::new(
                (0..200)
                    .map(|_| Point3::at(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(-1.5..1.5)))
                    .collect(),
            );
            let (mut inter, mut union) = (0usize, 0usize);
            for p in &cloud.points {
                let ia = crate::geometry::point_in_box(p.pos(), &a);
                let ib = crate::geometry::point_in_box(p.pos(), &b);
                inter += (ia && ib) as usize;
                union += (ia || ib) as usize;
            }
            let naive = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
            (points_iou(&points_in_box(&cloud, &a), &points_in_box(&cloud, &b)) != naive) as usize
        })
        .sum();
    CheckResult::new("points_iou_enumeration", config.points_iou_cases, mismatches as f64, 0.0)
}

/// Runs every suite on the current rayon pool. `loss` sets the parameters
/// the loss gradients are checked at.
pub fn run_selfcheck(config: &SelfcheckConfig, loss: &LossConfig) -> Result<SelfcheckReport> {
    config.validate()?;
    loss.validate()?;
    let mut checks = vec![
        timed(|| monte_carlo_iou_check(rotated_bev_iou, config)),
        timed(|| closed_form_iou_check(config)),
        timed(|| points_iou_check(config)),
        timed(|| encode_decode_check(config)),
    ];
    let t = Instant::now();
    let mut grads = loss_gradient_check(config, loss);
    let per = t.elapsed().as_secs_f64() / grads.len() as f64;
    grads.iter_mut().for_each(|g| g.seconds = per);
    checks.extend(grads);
    checks.extend(pool_checks(config)?);
    checks.extend(io_roundtrip_checks(config)?);
    Ok(SelfcheckReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> SelfcheckConfig {
        SelfcheckConfig {
            iou_pairs: 20,
            mc_grid: 200,
            closed_form_cases: 100,
            gradient_cases: 8,
            pool_cases: 2,
            roundtrip_cases: 500,
            label_cases: 20,
            points_iou_cases: 50,
            ..SelfcheckConfig::default()
        }
    }

    #[test]
    fn quick_suite_passes() {
        let r = run_selfcheck(&quick(), &LossConfig::default()).unwrap();
        assert!(r.passed, "{:#?}", r.checks.iter().filter(|c| !c.passed).collect::<Vec<_>>());
    }

    #[test]
    fn monte_carlo_detects_swapped_trig() {
        // corners built with sin and cos exchanged
        let broken = |a: &Box3D, b: &Box3D| {
            let swap = |x: &Box3D| Box3D {
                yaw: PI / 2.0 - x.yaw,
                ..*x
            };
            rotated_bev_iou(&swap(a), &swap(b))
        };
        let r = monte_carlo_iou_check(broken, &quick());
        assert!(!r.passed && r.max_error > 0.05, "{r:?}");
    }

    #[test]
    fn monte_carlo_estimate_is_sane() {
        let a = Box3D::new_unchecked([0.0; 3], [2.0, 2.0, 1.0], 0.0);
        let b = Box3D::new_unchecked([1.0, 0.0, 0.0], [2.0, 2.0, 1.0], 0.0);
        let est = monte_carlo_bev_iou(&a, &b, 400, &mut seeded(1));
        assert!((est - 1.0 / 3.0).abs() < 1e-3);
    }
}
