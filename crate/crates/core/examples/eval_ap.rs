//! Average precision by difficulty on a small hand-checkable case and on
//! noisy synthetic detections.
//!
//! cargo run --release --example eval_ap

use pointdet::bench::detections::{generate_set, post_process, DetectionBenchConfig};
use pointdet::dataio::eval::{average_precision, ApQuery, Interpolation};
use pointdet::dataio::kitti::{Difficulty, GroundTruth, CAR};
use pointdet::geometry::Box3D;
use pointdet::nms::{Detection, NmsStrategy};

fn car(x: f64) -> Box3D {
    Box3D::new_unchecked([x, 0.0, 0.0], [4.0, 1.6, 1.5], 0.0)
}

fn main() -> pointdet::Result<()> {
    // hit, miss, hit: precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1
    let gts = vec![vec![
        GroundTruth { bbox: car(0.0), class_id: CAR, difficulty: Difficulty::Easy },
        GroundTruth { bbox: car(10.0), class_id: CAR, difficulty: Difficulty::Easy },
    ]];
    let dets = vec![vec![
        Detection::new(car(0.0), 0.9, CAR),
        Detection::new(car(50.0), 0.8, CAR),
        Detection::new(car(10.0), 0.7, CAR),
    ]];
    let q = ApQuery::car_3d();
    let r11 = average_precision(&dets, &gts, &q).easy.unwrap();
    let r40 = average_precision(&dets, &gts, &ApQuery { interpolation: Interpolation::R40, ..q }).easy.unwrap();
    println!("fixture: R11 {r11} (28/33 = {}), R40 {r40}", 28.0 / 33.0);

    let config = DetectionBenchConfig::default();
    let set = generate_set(&config, 0)?;
    println!("\nsynthetic set: {} objects, {} raw detections", set.scene.ground_truth.len(), set.detections.len());
    println!("{:<14} {:>7} {:>9} {:>7}", "ranking", "easy", "moderate", "hard");
    for s in NmsStrategy::ALL {
        let kept = post_process(&set, s, &config.nms)?;
        let ap = average_precision(&[kept], &[set.scene.ground_truth.clone()], &config.query);
        let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!("{:<14} {:>7} {:>9} {:>7}", s.name(), f(ap.easy), f(ap.moderate), f(ap.hard));
    }
    Ok(())
}
