use pointdet::dataio::eval::{average_precision, proposal_recall, ApQuery, Interpolation};
use pointdet::dataio::kitti::{Difficulty, GroundTruth, CAR, DONT_CARE};
use pointdet::geometry::Box3D;
use pointdet::nms::Detection;
use proptest::prelude::*;

fn car(x: f64, y: f64) -> Box3D {
    Box3D::new_unchecked([x, y, 0.0], [4.0, 1.6, 1.5], 0.0)
}

fn gt(x: f64, d: Difficulty) -> GroundTruth {
    GroundTruth { bbox: car(x, 0.0), class_id: CAR, difficulty: d }
}

const LEVELS: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

/// Scene with 6 objects 10 m apart; detections are either on an object
/// (offset `dy`) or far away, with arbitrary scores.
fn arb_case() -> impl Strategy<Value = (Vec<GroundTruth>, Vec<Detection>)> {
    let gts = prop::collection::vec(0usize..3, 1..6)
        .prop_map(|ds| ds.iter().enumerate().map(|(k, &d)| gt(10.0 * k as f64, LEVELS[d])).collect::<Vec<_>>());
    let dets = prop::collection::vec((0usize..8, -0.6..0.6f64, 0.01..1.0f64), 0..15).prop_map(|v| {
        v.into_iter()
            .map(|(k, dy, s)| {
                let x = if k < 6 { 10.0 * k as f64 } else { 200.0 + 10.0 * k as f64 };
                Detection::new(car(x, dy), s, CAR)
            })
            .collect::<Vec<_>>()
    });
    (gts, dets)
}

proptest! {
    #[test]
    fn ap_ignores_monotone_score_transforms((gts, dets) in arb_case()) {
        let q = ApQuery::car_3d();
        let base = average_precision(&[dets.clone()], &[gts.clone()], &q);
        for f in [|s: f64| s.powi(3), |s: f64| (5.0 * s).exp() - 2.0, |s: f64| s / (1.0 + s)] {
            let moved: Vec<Detection> = dets.iter().map(|d| Detection { cls_score: f(d.cls_score), ..*d }).collect();
            prop_assert_eq!(average_precision(&[moved], &[gts.clone()], &q), base);
        }
    }

    #[test]
    fn adding_a_top_ranked_hit_never_lowers_ap((gts, dets) in arb_case()) {
        for interpolation in [Interpolation::R11, Interpolation::R40] {
            let q = ApQuery { interpolation, ..ApQuery::car_3d() };
            // an exact hit on an easy object, ranked first
            let mut gts2 = gts.clone();
            gts2.push(gt(-10.0, Difficulty::Easy));
            let before = average_precision(&[dets.clone()], &[gts2.clone()], &q);
            let mut more = dets.clone();
            more.push(Detection::new(car(-10.0, 0.0), 2.0, CAR));
            let after = average_precision(&[more], &[gts2], &q);
            for d in LEVELS {
                prop_assert!(after.get(d).unwrap() >= before.get(d).unwrap() - 1e-12);
            }
        }
    }

    #[test]
    fn ap_is_between_zero_and_one((gts, dets) in arb_case()) {
        let r = average_precision(&[dets], &[gts], &ApQuery::car_3d());
        for d in LEVELS {
            if let Some(v) = r.get(d) {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}

#[test]
fn dont_care_regions_absorb_detections() {
    let gts = vec![vec![
        gt(0.0, Difficulty::Easy),
        GroundTruth { bbox: car(30.0, 0.0), class_id: DONT_CARE, difficulty: Difficulty::Ignored },
    ]];
    let with = vec![vec![Detection::new(car(30.0, 0.0), 0.95, CAR), Detection::new(car(0.0, 0.0), 0.9, CAR)]];
    let without = vec![vec![Detection::new(car(0.0, 0.0), 0.9, CAR)]];
    let q = ApQuery::car_3d();
    assert_eq!(average_precision(&with, &gts, &q), average_precision(&without, &gts, &q));
    assert_eq!(average_precision(&without, &gts, &q).easy, Some(1.0));
}

#[test]
fn empty_ground_truth_is_absent() {
    let r = average_precision(&[vec![Detection::new(car(0.0, 0.0), 0.9, CAR)]], &[vec![]], &ApQuery::car_3d());
    assert_eq!((r.easy, r.moderate, r.hard), (None, None, None));
}

#[test]
fn recall_counts_one_to_one_matches() {
    // three objects; two proposals on the first, one near the second, two
    // far away
    let gts = vec![vec![car(0.0, 0.0), car(10.0, 0.0), car(20.0, 0.0)]];
    let props = vec![vec![
        (car(0.0, 0.0), 0.9),
        (car(0.0, 0.1), 0.8),
        (car(10.0, 0.2), 0.7),
        (car(50.0, 0.0), 0.6),
        (car(60.0, 0.0), 0.5),
    ]];
    assert_eq!(proposal_recall(&props, &gts, 0.7, 100), Some(2.0 / 3.0));
    assert_eq!(proposal_recall(&props, &gts, 0.7, 0), Some(0.0));
    assert_eq!(proposal_recall(&[vec![]], &[vec![]], 0.7, 100), None);
    let exact: Vec<(Box3D, f64)> = gts[0].iter().map(|b| (*b, 1.0)).collect();
    assert_eq!(proposal_recall(&[exact], &gts, 1.0, 100), Some(1.0));
}
