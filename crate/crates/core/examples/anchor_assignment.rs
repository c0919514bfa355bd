//! Spherical anchors on a synthetic scene: PointsIoU labels, regression
//! targets and their decoding.
//!
//! cargo run --release --example anchor_assignment -- [seed]

use pointdet::anchors::{assign_labels, decode_targets, encode_targets, seed_anchors, ClassConfig};
use pointdet::dataio::synth::{synth_scene, SynthConfig};
use pointdet::geometry::{iou_3d, Box3D};

fn main() -> pointdet::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(1);
    let scene = synth_scene(&SynthConfig::default(), "000000", seed)?;
    let class = ClassConfig::car();
    let gts: Vec<Box3D> = scene.ground_truth.iter().map(|g| g.bbox).collect();

    let anchors = seed_anchors(&scene.cloud, &class);
    let labels = assign_labels(&anchors, &gts, &scene.cloud, class.points_iou_threshold);
    println!(
        "{} points -> {} anchors (radius {} m), PointsIoU threshold {}",
        scene.cloud.len(),
        anchors.len(),
        class.radius,
        class.points_iou_threshold
    );
    println!("{:>3} {:>9} {:>9} {:>10}", "gt", "difficulty", "positives", "best PIoU");
    for (g, gt) in scene.ground_truth.iter().enumerate() {
        let mine: Vec<f64> = labels
            .iter()
            .filter(|l| l.matched_gt == Some(g))
            .map(|l| l.points_iou)
            .collect();
        let pos = labels.iter().filter(|l| l.is_positive() && l.matched_gt == Some(g)).count();
        let best = mine.iter().copied().fold(0.0, f64::max);
        println!("{g:>3} {:>9} {pos:>9} {best:>10.3}", gt.difficulty.name());
    }

    // decoding the encoded targets of a positive gives back its GT
    if let Some((a, l)) = anchors.iter().zip(&labels).find(|(_, l)| l.is_positive()) {
        let gt = &gts[l.matched_gt.unwrap()];
        let t = encode_targets(a, gt, class.angle_bins)?;
        let back = decode_targets(a, &t, class.angle_bins)?.bbox;
        println!("\nanchor at point {}: target {t:?}", a.point_index);
        println!("decoded IoU with its GT: {:.12}", iou_3d(&back, gt));
    }
    Ok(())
}
