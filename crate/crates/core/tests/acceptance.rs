//! Acceptance criteria, one PASS/FAIL line each. Oracles here are written
//! independently of the library's own self-check code.

use std::f64::consts::PI;
use std::time::Instant;

use pointdet::anchors::{decode_box_targets, encode_box_targets, points_iou, ClassConfig, ProposalTarget};
use pointdet::bench::detections::{nms_comparison, DetectionBenchConfig};
use pointdet::bench::recall::{recall_comparison, AnchorMode, RecallConfig};
use pointdet::dataio::eval::{average_precision, ApQuery};
use pointdet::dataio::kitti::{
    box_to_label, camera_to_internal, format_labels, parse_labels, parse_velodyne, write_velodyne, Calib, Difficulty, GroundTruth, CAR,
};
use pointdet::dataio::synth::{synth_scene, SynthConfig};
use pointdet::geometry::{iou_3d, rotated_bev_iou, Box3D, Point3, PointCloud};
use pointdet::losses::{
    box_loss, corner_loss_with, focal_loss, iou_branch_loss, proposal_loss, smooth_l1, softmax_ce, AnchorPrediction, BoxPrediction,
    CornerMatching, LossConfig, LossValue, ProposalBatch,
};
use pointdet::nms::{Detection, NmsStrategy};
use pointdet::points_pool::{pool_backward, pool_forward, PoolConfig};
use pointdet::rng::{derive_seed, seeded, Rng};
use pointdet::selfcheck::{run_selfcheck, tilted_calib, SelfcheckConfig};
use pointdet::spatial::PointGrid;
use rand::Rng as _;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn box_from(rng: &mut Rng, spread: f64) -> Box3D {
    Box3D::new_unchecked(
        [rng.random_range(-spread..=spread), rng.random_range(-spread..=spread), rng.random_range(-0.5..0.5)],
        [rng.random_range(0.3..5.0), rng.random_range(0.3..3.0), rng.random_range(0.5..2.0)],
        rng.random_range(-PI..PI),
    )
}

fn corners_2d(b: &Box3D) -> [[f64; 2]; 4] {
    let (s, c) = b.yaw.sin_cos();
    [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)].map(|(u, v)| {
        let (x, y) = (u * b.l / 2.0, v * b.w / 2.0);
        [b.cx + c * x - s * y, b.cy + s * x + c * y]
    })
}

/// Inside test by edge cross products against the corner polygon.
fn inside(p: [f64; 2], poly: &[[f64; 2]; 4]) -> bool {
    (0..4).all(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % 4]);
        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0
    })
}

/// Stratified jittered sampling of the union's bounding rectangle.
fn sampled_iou(a: &Box3D, b: &Box3D, n: usize, rng: &mut Rng) -> f64 {
    let (pa, pb) = (corners_2d(a), corners_2d(b));
    let xs = pa.iter().chain(&pb).map(|p| p[0]);
    let ys = pa.iter().chain(&pb).map(|p| p[1]);
    let (x0, x1) = xs.fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (y0, y1) = ys.fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (dx, dy) = ((x1 - x0) / n as f64, (y1 - y0) / n as f64);
    let (mut both, mut any) = (0u64, 0u64);
    for i in 0..n {
        for j in 0..n {
            let p = [x0 + (i as f64 + rng.random::<f64>()) * dx, y0 + (j as f64 + rng.random::<f64>()) * dy];
            let (ia, ib) = (inside(p, &pa), inside(p, &pb));
            both += (ia && ib) as u64;
            any += (ia || ib) as u64;
        }
    }
    both as f64 / any.max(1) as f64
}

fn iou_monte_carlo() -> Outcome {
    let t = Instant::now();
    let n = 320;
    let mut worst = 0.0f64;
    for k in 0..200u64 {
        let mut rng = seeded(derive_seed(77, k));
        let a = box_from(&mut rng, 0.0);
        let b = box_from(&mut rng, 2.0);
        worst = worst.max((rotated_bev_iou(&a, &b) - sampled_iou(&a, &b, n, &mut rng)).abs());
    }
    // axis-aligned closed form
    let mut rng = seeded(78);
    let mut closed = 0.0f64;
    let ov = |a0: f64, a1: f64, b0: f64, b1: f64| (a1.min(b1) - a0.max(b0)).max(0.0);
    for _ in 0..1000 {
        let (mut a, mut b) = (box_from(&mut rng, 0.0), box_from(&mut rng, 2.0));
        a.yaw = 0.0;
        b.yaw = 0.0;
        let ix = ov(a.cx - a.l / 2.0, a.cx + a.l / 2.0, b.cx - b.l / 2.0, b.cx + b.l / 2.0);
        let iy = ov(a.cy - a.w / 2.0, a.cy + a.w / 2.0, b.cy - b.w / 2.0, b.cy + b.w / 2.0);
        let iz = ov(a.cz - a.h / 2.0, a.cz + a.h / 2.0, b.cz - b.h / 2.0, b.cz + b.h / 2.0);
        let bev = ix * iy / (a.l * a.w + b.l * b.w - ix * iy);
        let v3 = ix * iy * iz / (a.l * a.w * a.h + b.l * b.w * b.h - ix * iy * iz);
        closed = closed.max((rotated_bev_iou(&a, &b) - bev).abs()).max((iou_3d(&a, &b) - v3).abs());
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst <= 2e-3 && closed <= 1e-12 && secs < 60.0,
        format!("200 pairs x {} samples: max |err| {worst:.2e} (tol 2e-3); axis-aligned {closed:.1e} (tol 1e-12); {secs:.1}s", n * n),
    )
}

fn points_iou_oracle() -> Outcome {
    let r = ClassConfig::car().radius;
    let mut rng = seeded(91);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let cloud = PointCloud::new(
            (0..rng.random_range(0..300))
                .map(|_| Point3::at(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-2.0..2.0)))
                .collect(),
        );
        let gt = box_from(&mut rng, 2.0);
        let c = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0)];
        let poly = corners_2d(&gt);
        let (mut inter, mut union) = (0usize, 0usize);
        for p in &cloud.points {
            let in_a = (p.x - c[0]).powi(2) + (p.y - c[1]).powi(2) + (p.z - c[2]).powi(2) <= r * r;
            let in_g = inside([p.x, p.y], &poly) && (p.z - gt.cz).abs() <= gt.h / 2.0;
            inter += (in_a && in_g) as usize;
            union += (in_a || in_g) as usize;
        }
        let naive = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
        let grid = PointGrid::new(&cloud, 2.0);
        let lib = points_iou(&grid.in_sphere(&Point3::at(c[0], c[1], c[2]), r), &grid.in_box(&gt));
        mismatches += (lib != naive) as usize;
    }
    outcome(mismatches == 0, format!("1000 triples, {mismatches} mismatches"))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn points_pool() -> Outcome {
    let config = PoolConfig::default();
    let w = config.feature_width;
    let (mut adj, mut fd, mut eq) = (0.0f64, 0.0f64, 0.0f64);
    let mut layout = true;
    let mut summary = String::new();
    for case in 0..6u64 {
        let mut rng = seeded(derive_seed(500, case));
        let proposal = Box3D::new_unchecked(
            [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), -1.0],
            [4.0, 1.7, 1.5],
            rng.random_range(-PI..PI),
        );
        let inside_n = if case % 2 == 0 { 600 } else { 37 };
        let (s, c) = proposal.yaw.sin_cos();
        let mut pts = Vec::new();
        for _ in 0..inside_n {
            let (u, v, z) = (rng.random_range(-1.98..1.98), rng.random_range(-0.84..0.84), rng.random_range(-0.74..0.74));
            pts.push(Point3::at(proposal.cx + c * u - s * v, proposal.cy + s * u + c * v, proposal.cz + z));
        }
        for _ in 0..200 {
            pts.push(Point3::at(proposal.cx + rng.random_range(5.0..9.0), proposal.cy + rng.random_range(-9.0..9.0), proposal.cz));
        }
        let cloud = PointCloud::new(pts);
        let u: Vec<f64> = (0..cloud.len() * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let seed = rng.random();
        let forward = |cl: &PointCloud, x: &[f64], b: &Box3D| pool_forward(cl, x, b, &config, seed).unwrap();
        let (fu, routing) = forward(&cloud, &u, &proposal);
        let (f0, _) = forward(&cloud, &vec![0.0; u.len()], &proposal);
        let v: Vec<f64> = (0..fu.values.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ftv = pool_backward(&v, &routing).unwrap();
        let lin: Vec<f64> = fu.values.iter().zip(&f0.values).map(|(a, b)| a - b).collect();
        adj = adj.max((dot(&lin, &v) - dot(&u, &ftv)).abs());

        let h = 1e-6;
        for _ in 0..40 {
            let i = rng.random_range(0..u.len());
            let mut y = u.clone();
            y[i] += h;
            let up = dot(&forward(&cloud, &y, &proposal).0.values, &v);
            y[i] -= 2.0 * h;
            let down = dot(&forward(&cloud, &y, &proposal).0.values, &v);
            let n = (up - down) / (2.0 * h);
            fd = fd.max((n - ftv[i]).abs() / 1f64.max(n.abs()).max(ftv[i].abs()));
        }

        let yaw = rng.random_range(-PI..PI);
        let t = [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0), rng.random_range(-1.0..1.0)];
        let (s2, c2) = yaw.sin_cos();
        let moved = PointCloud::new(cloud.points.iter().map(|p| Point3::at(c2 * p.x - s2 * p.y + t[0], s2 * p.x + c2 * p.y + t[1], p.z + t[2])).collect());
        let (fm, _) = forward(&moved, &u, &proposal.transformed(yaw, t));
        eq = eq.max(if fm.mask == fu.mask {
            fm.values.iter().zip(&fu.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        } else {
            f64::INFINITY
        });

        if inside_n == 600 {
            let occ: Vec<usize> = (0..config.voxels()).map(|k| fu.voxel_occupancy(k)).collect();
            let sampled: usize = occ.iter().sum();
            let max = *occ.iter().max().unwrap();
            layout &= fu.shape() == [6, 6, 6, 35, w + 3] && !fu.resampled && max <= 35 && sampled <= 512;
            summary = format!("600 interior -> {sampled} pooled slots, max {max}/voxel");
        }
    }
    outcome(
        adj <= 1e-10 && fd <= 1e-6 && eq <= 1e-9 && layout,
        format!("adjoint {adj:.1e} (1e-10), FD {fd:.1e} (1e-6 rel), equivariance {eq:.1e} (1e-9); N=512 6x6x6x35: {summary}"),
    )
}

/// Central differences of the value against the analytic gradient.
fn fd_error(f: &dyn Fn(&[f64]) -> LossValue, x: &[f64]) -> f64 {
    let h = 1e-6;
    let g = f(x).gradient;
    assert_eq!(g.len(), x.len());
    let mut worst = 0.0f64;
    let mut y = x.to_vec();
    for i in 0..x.len() {
        y[i] = x[i] + h;
        let up = f(&y).value;
        y[i] = x[i] - h;
        let down = f(&y).value;
        y[i] = x[i];
        let n = (up - down) / (2.0 * h);
        worst = worst.max((n - g[i]).abs() / 1f64.max(n.abs()).max(g[i].abs()));
    }
    worst
}

/// Uniform value whose distance to `±1` (the smooth-L1 kinks) is > 0.01.
fn away_from_kink(rng: &mut Rng) -> f64 {
    loop {
        let v: f64 = rng.random_range(-2.5..2.5);
        if (v.abs() - 1.0).abs() > 0.01 {
            return v;
        }
    }
}

fn loss_gradients() -> Outcome {
    let cfg = LossConfig::default();
    let bins = cfg.angle_bins;
    let mut rng = seeded(123);
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut note = |name, e: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some(w) => w.1 = w.1.max(e),
        None => worst.push((name, e)),
    };
    for _ in 0..30 {
        let t: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = t.iter().map(|v| v + away_from_kink(&mut rng)).collect();
        note("smooth_l1", fd_error(&|y| smooth_l1(y, &t, 1.0).unwrap(), &x));

        let p = rng.random_range(0.02..0.98);
        note("focal", fd_error(&|y| focal_loss(y[0], 0.25, 2.0), &[p]));

        let logits: Vec<f64> = (0..bins).map(|_| rng.random_range(-3.0..3.0)).collect();
        let label = rng.random_range(0..bins);
        note("softmax_ce", fd_error(&|y| softmax_ce(y, label).unwrap(), &logits));

        let gt = box_from(&mut rng, 5.0);
        let x = [
            gt.cx + rng.random_range(-1.0..1.0),
            gt.cy + rng.random_range(-1.0..1.0),
            gt.cz + rng.random_range(-0.3..0.3),
            gt.l * rng.random_range(0.8..1.2),
            gt.w * rng.random_range(0.8..1.2),
            gt.h * rng.random_range(0.8..1.2),
            gt.yaw + rng.random_range(-0.6..0.6),
        ];
        let as_box = |y: &[f64]| Box3D::new_unchecked([y[0], y[1], y[2]], [y[3], y[4], y[5]], y[6]);
        note("corner", fd_error(&|y| corner_loss_with(&as_box(y), &gt, CornerMatching::Direct), &x));
        note("corner_flip_min", fd_error(&|y| corner_loss_with(&as_box(y), &gt, CornerMatching::FlipMin), &x));

        let prop = box_from(&mut rng, 0.0);
        let gt2 = box_from(&mut rng, 1.0);
        let xi = [iou_3d(&prop, &gt2) + away_from_kink(&mut rng)];
        note("iou_branch", fd_error(&|y| iou_branch_loss(y[0], &prop, Some(&gt2), 1.0).unwrap(), &xi));
    }

    for _ in 0..8 {
        // first stage: 4 seg probs, 3 anchors (2 positive) of 2 + 7 + bins params
        let targets: Vec<ProposalTarget> = (0..3)
            .map(|_| {
                let (a, g) = (box_from(&mut rng, 0.0), box_from(&mut rng, 2.0));
                encode_box_targets(a.center(), a.size(), &g, bins).unwrap()
            })
            .collect();
        let mut x: Vec<f64> = (0..4).map(|_| rng.random_range(0.05..0.95)).collect();
        for t in &targets {
            x.extend((0..2).map(|_| rng.random_range(-2.0..2.0)));
            x.extend(t.center.iter().chain(&t.size).map(|v| v + away_from_kink(&mut rng)));
            x.extend((0..bins).map(|_| rng.random_range(-2.0..2.0)));
            x.push(t.angle_residual + away_from_kink(&mut rng));
        }
        let build = |y: &[f64]| {
            let stride = 2 + 6 + bins + 1;
            ProposalBatch {
                seg_probs: y[..4].to_vec(),
                anchors: (0..3)
                    .map(|k| {
                        let b = &y[4 + k * stride..4 + (k + 1) * stride];
                        AnchorPrediction {
                            cls_logits: b[..2].to_vec(),
                            label: (k < 2) as usize,
                            center: [b[2], b[3], b[4]],
                            size: [b[5], b[6], b[7]],
                            angle_logits: b[8..8 + bins].to_vec(),
                            angle_residual: b[8 + bins],
                            target: Some(targets[k]),
                        }
                    })
                    .collect(),
            }
        };
        note("proposal_loss", fd_error(&|y| proposal_loss(&build(y), &cfg).unwrap(), &x));

        // second stage: 3 proposals (2 positive) of 2 + 6 + bins + 2 params
        let pairs: Vec<(Box3D, Box3D)> = (0..3).map(|_| (box_from(&mut rng, 0.0), box_from(&mut rng, 1.5))).collect();
        let mut x = Vec::new();
        for (p, g) in &pairs {
            let t = encode_box_targets(p.center(), p.size(), g, bins).unwrap();
            x.extend((0..2).map(|_| rng.random_range(-2.0..2.0)));
            x.extend(t.center.iter().map(|v| v + rng.random_range(-0.4..0.4)));
            x.extend(t.size.iter().map(|v| v + rng.random_range(-0.2..0.2)));
            let mut logits: Vec<f64> = (0..bins).map(|_| rng.random_range(-2.0..2.0)).collect();
            logits[rng.random_range(0..bins)] = 3.0;
            x.extend(logits);
            x.push(t.angle_residual + rng.random_range(-0.2..0.2));
            x.push(iou_3d(p, g) + away_from_kink(&mut rng));
        }
        let build = |y: &[f64]| -> Vec<BoxPrediction> {
            let stride = 2 + 6 + bins + 2;
            pairs
                .iter()
                .enumerate()
                .map(|(k, (p, g))| {
                    let b = &y[k * stride..(k + 1) * stride];
                    BoxPrediction {
                        proposal: *p,
                        cls_logits: b[..2].to_vec(),
                        label: (k < 2) as usize,
                        center_shift: [b[2], b[3], b[4]],
                        size_residual: [b[5], b[6], b[7]],
                        angle_logits: b[8..8 + bins].to_vec(),
                        angle_residual: b[8 + bins],
                        predicted_iou: b[9 + bins],
                        gt: (k < 2).then_some(*g),
                    }
                })
                .collect()
        };
        note("box_loss", fd_error(&|y| box_loss(&build(y), &cfg).unwrap(), &x));
    }
    let focal = (focal_loss(0.5, 0.25, 2.0).value - 0.0625 * 2f64.ln()).abs();
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let names: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.0e}")).collect();
    outcome(
        max <= 1e-6 && focal <= 1e-12,
        format!("max rel err {max:.1e} (1e-6) [{}]; focal(0.5) - 0.0625 ln2 = {focal:.0e}", names.join(", ")),
    )
}

fn encode_decode() -> Outcome {
    let mut rng = seeded(321);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let c = [rng.random_range(0.0..70.0), rng.random_range(-40.0..40.0), rng.random_range(-3.0..1.0)];
        let s = [rng.random_range(0.3..5.0), rng.random_range(0.3..3.0), rng.random_range(0.5..2.0)];
        let g = Box3D::new_unchecked(
            [c[0] + rng.random_range(-3.0..3.0), c[1] + rng.random_range(-3.0..3.0), c[2] + rng.random_range(-1.0..1.0)],
            [rng.random_range(0.3..5.0), rng.random_range(0.3..3.0), rng.random_range(0.5..2.0)],
            rng.random_range(-PI..PI),
        );
        let t = encode_box_targets(c, s, &g, 12).unwrap();
        let d = decode_box_targets(c, s, &t, 12).unwrap().bbox;
        let dyaw = (d.yaw - g.yaw).rem_euclid(2.0 * PI);
        let e = [d.cx - g.cx, d.cy - g.cy, d.cz - g.cz, d.l - g.l, d.w - g.w, d.h - g.h, dyaw.min(2.0 * PI - dyaw)];
        worst = e.iter().fold(worst, |m, v| m.max(v.abs()));
    }
    outcome(worst <= 1e-12, format!("10000 cases, 12 bins: max err {worst:.1e} (1e-12)"))
}

fn nms_tables(out: &mut Vec<(&'static str, Outcome)>) {
    let seeds: Vec<u64> = (0..20).collect();
    let cmp = nms_comparison(&DetectionBenchConfig::default(), &seeds).unwrap();
    let m = |s: &pointdet::bench::detections::SetResult, k| s.ap(k).and_then(|a| a.moderate).unwrap();
    let per_seed_ok = cmp.sets.iter().all(|s| m(s, NmsStrategy::Oracle) >= m(s, NmsStrategy::Score));
    let n = cmp.sets.len() as f64;
    let mean = |k| cmp.sets.iter().map(|s| m(s, k)).sum::<f64>() / n;
    let gain = mean(NmsStrategy::Oracle) - mean(NmsStrategy::Score);
    out.push((
        "oracle-IoU ranking >= score ranking per seed",
        outcome(
            per_seed_ok && gain > 0.0,
            format!(
                "20 seeds, moderate AP: oracle >= score on every seed: {per_seed_ok}; mean {:.3} -> {:.3} (+{gain:.3})",
                mean(NmsStrategy::Score),
                mean(NmsStrategy::Oracle)
            ),
        ),
    ));
    let p = |k| cmp.pooled_ap(k).and_then(|a| a.moderate).unwrap();
    let (g, s, pi) = (p(NmsStrategy::IouGuided), p(NmsStrategy::Score), p(NmsStrategy::PredictedIou));
    out.push((
        "cls x predicted IoU >= score-NMS and >= predicted IoU alone",
        outcome(
            g >= s && g >= pi,
            format!("AP over the same 20 sets, moderate: iou_guided {g:.3}, score {s:.3}, predicted_iou {pi:.3}, soft {:.3}", p(NmsStrategy::Soft)),
        ),
    ));
}

fn recall_table() -> Outcome {
    let synth = SynthConfig::default();
    let scenes: Vec<_> = (0..20u64).map(|k| synth_scene(&synth, &format!("{k:06}"), derive_seed(0, k)).unwrap()).collect();
    let modes = recall_comparison(&scenes, &RecallConfig::default(), 0).unwrap();
    let get = |m: AnchorMode| modes.iter().find(|r| r.mode == m).unwrap();
    let (sp, c1, c2) = (get(AnchorMode::Sphere), get(AnchorMode::CuboidSingle), get(AnchorMode::CuboidPair));
    let ratio = sp.anchors as f64 / c2.anchors as f64;
    let (rs, r1, r2) = (sp.recall.unwrap(), c1.recall.unwrap(), c2.recall.unwrap());
    outcome(
        rs >= r1 && (ratio - 0.5).abs() < 0.05,
        format!(
            "20 scenes, top {}: recall sphere {rs:.3}, cuboid_1 {r1:.3}, cuboid_2 {r2:.3}; anchors {} vs {} (ratio {ratio:.3})",
            RecallConfig::default().top_k,
            sp.anchors,
            c2.anchors
        ),
    )
}

fn ap_fixture() -> Outcome {
    // Two easy cars, three detections ranked hit / miss / hit.
    // Cumulative (recall, precision): (1/2, 1), (1/2, 1/2), (1, 2/3).
    // Interpolated precision is 1 at recall 0.0..0.5 (6 points) and 2/3 at
    // 0.6..1.0 (5 points): AP = (6 + 5 * 2/3) / 11 = 28/33.
    let car = |x: f64| Box3D::new_unchecked([x, 0.0, 0.0], [4.0, 1.6, 1.5], 0.0);
    let gts = vec![vec![
        GroundTruth { bbox: car(0.0), class_id: CAR, difficulty: Difficulty::Easy },
        GroundTruth { bbox: car(10.0), class_id: CAR, difficulty: Difficulty::Easy },
    ]];
    let dets = vec![vec![Detection::new(car(0.0), 0.9, CAR), Detection::new(car(50.0), 0.8, CAR), Detection::new(car(10.0), 0.7, CAR)]];
    let ap = average_precision(&dets, &gts, &ApQuery::car_3d()).easy;
    outcome(ap == Some(28.0 / 33.0), format!("R11 easy AP {ap:?}, expected 28/33 = {}", 28.0 / 33.0))
}

fn kitti_io() -> Outcome {
    let mut rng = seeded(4242);
    let raw: Vec<u8> = (0..4000)
        .flat_map(|_| {
            let f: f32 = rng.random_range(-100.0..100.0);
            f.to_le_bytes()
        })
        .collect();
    let velo = write_velodyne(&parse_velodyne(&raw).unwrap()) == raw;

    let mut label_err = 0.0f64;
    for calib in [Calib::axis_permutation(), tilted_calib()] {
        for _ in 0..100 {
            let mut b = box_from(&mut rng, 20.0);
            b.cx += 30.0;
            let row = box_to_label(&b, "Car", &calib, None, None).unwrap();
            let back = camera_to_internal(&parse_labels(&format_labels(&[row])).unwrap()[0], &calib).unwrap().bbox;
            let dyaw = (back.yaw - b.yaw).rem_euclid(2.0 * PI);
            for e in [back.cx - b.cx, back.cy - b.cy, back.cz - b.cz, back.l - b.l, back.w - b.w, back.h - b.h, dyaw.min(2.0 * PI - dyaw)] {
                label_err = label_err.max(e.abs());
            }
        }
    }

    let t = Instant::now();
    let report = run_selfcheck(&SelfcheckConfig::default(), &LossConfig::default()).unwrap();
    let secs = t.elapsed().as_secs_f64();
    outcome(
        velo && label_err <= 1e-9 && report.passed && secs < 300.0,
        format!(
            "velodyne bit-exact: {velo}; label conversion max err {label_err:.1e} (1e-9); selfcheck {} checks, failed {:?}, {secs:.1}s",
            report.checks.len(),
            report.failed()
        ),
    )
}

fn main() {
    let mut results: Vec<(&'static str, Outcome)> = vec![
        ("rotated BEV IoU vs Monte-Carlo and closed form", iou_monte_carlo()),
        ("PointsIoU vs membership enumeration", points_iou_oracle()),
        ("PointsPool adjoint, FD, equivariance, layout", points_pool()),
        ("loss gradients vs central differences", loss_gradients()),
        ("target encode/decode round-trip", encode_decode()),
    ];
    nms_tables(&mut results);
    results.push(("sphere recall >= cuboid_1, half the anchors of cuboid_2", recall_table()));
    results.push(("AP hand fixture", ap_fixture()));
    results.push(("KITTI I/O round-trips and full selfcheck", kitti_io()));

    let mut failed = 0;
    for (name, o) in &results {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += !o.pass as usize;
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
