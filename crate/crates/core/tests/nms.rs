use std::f64::consts::PI;

use pointdet::geometry::{rotated_bev_iou, Box3D};
use pointdet::nms::{rank_scores, run_nms, Detection, IouMetric, NmsConfig, NmsStrategy};
use proptest::prelude::*;

fn arb_det() -> impl Strategy<Value = Detection> {
    (-8.0..8.0f64, -8.0..8.0f64, 2.0..5.0f64, 1.0..2.5f64, -PI..PI, 0.0..1.0f64, 0.0..1.0f64).prop_map(|(x, y, l, w, yaw, s, p)| {
        Detection::new(Box3D::new_unchecked([x, y, 0.0], [l, w, 1.5], yaw), s, 1).with_predicted_iou(p)
    })
}

fn config(strategy: NmsStrategy, threshold: f64) -> NmsConfig {
    NmsConfig {
        strategy,
        metric: IouMetric::BevRotated,
        threshold,
        max_keep: 1000,
        ..NmsConfig::test()
    }
}

proptest! {
    #[test]
    fn hard_nms_keeps_a_non_overlapping_ranked_set(dets in prop::collection::vec(arb_det(), 0..40), thr in 0.05..0.9f64) {
        for strategy in [NmsStrategy::Score, NmsStrategy::IouGuided, NmsStrategy::PredictedIou] {
            let kept = run_nms(&dets, &config(strategy, thr), None).unwrap();
            let scores = rank_scores(&dets, strategy, None).unwrap();
            for w in kept.windows(2) {
                prop_assert!(w[0].1 >= w[1].1);
            }
            for (i, &(a, sa)) in kept.iter().enumerate() {
                prop_assert_eq!(sa, scores[a]);
                for &(b, _) in &kept[i + 1..] {
                    prop_assert!(rotated_bev_iou(&dets[a].bbox, &dets[b].bbox) <= thr);
                }
            }
            // every suppressed box overlaps a kept box ranked above it
            for d in 0..dets.len() {
                if kept.iter().any(|k| k.0 == d) { continue; }
                prop_assert!(kept.iter().any(|&(k, s)| s >= scores[d] && rotated_bev_iou(&dets[k].bbox, &dets[d].bbox) > thr));
            }
            // idempotent on its own output
            let sub: Vec<Detection> = kept.iter().map(|k| dets[k.0]).collect();
            prop_assert_eq!(run_nms(&sub, &config(strategy, thr), None).unwrap().len(), sub.len());
        }
    }

    #[test]
    fn soft_nms_never_raises_scores(dets in prop::collection::vec(arb_det(), 1..30)) {
        let out = run_nms(&dets, &config(NmsStrategy::Soft, 0.3), None).unwrap();
        for (i, s) in out {
            prop_assert!(s <= dets[i].cls_score + 1e-15);
        }
    }

    #[test]
    fn constant_cls_makes_iou_guided_match_predicted_iou(dets in prop::collection::vec(arb_det(), 0..30)) {
        let flat: Vec<Detection> = dets.iter().map(|d| Detection { cls_score: 1.0, ..*d }).collect();
        let a: Vec<usize> = run_nms(&flat, &config(NmsStrategy::IouGuided, 0.5), None).unwrap().into_iter().map(|k| k.0).collect();
        let b: Vec<usize> = run_nms(&flat, &config(NmsStrategy::PredictedIou, 0.5), None).unwrap().into_iter().map(|k| k.0).collect();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn oracle_needs_ground_truth_and_guided_needs_predicted_iou() {
    let d = Detection::new(Box3D::new_unchecked([0.0; 3], [4.0, 1.6, 1.5], 0.0), 0.9, 1);
    assert!(run_nms(&[d], &config(NmsStrategy::Oracle, 0.5), None).is_err());
    assert!(run_nms(&[d], &config(NmsStrategy::IouGuided, 0.5), None).is_err());
    let gt = [d.bbox];
    assert_eq!(run_nms(&[d], &config(NmsStrategy::Oracle, 0.5), Some(&gt)).unwrap(), vec![(0, 1.0)]);
}
