//! Writes a synthetic scene in the benchmark layout, reads it back and
//! compares boxes.
//!
//! cargo run --example kitti_io -- [out_dir]

use std::path::PathBuf;

use pointdet::dataio::kitti::{box_to_label, class_name, format_labels, read_scene, write_scene, Calib};
use pointdet::dataio::synth::{label_template, synth_scene, SynthConfig};

fn main() -> pointdet::Result<()> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("pointdet_kitti_io"));
    let scene = synth_scene(&SynthConfig::default(), "000042", 42)?;
    let calib = Calib::axis_permutation();
    let labels = scene
        .ground_truth
        .iter()
        .map(|g| box_to_label(&g.bbox, class_name(g.class_id), &calib, Some(&label_template(g.difficulty)), None))
        .collect::<pointdet::Result<Vec<_>>>()?;
    write_scene(&root, &scene, &labels, &calib)?;
    print!("{}", format_labels(&labels[..labels.len().min(3)]));

    let back = read_scene(&root, &scene.id)?;
    let worst = scene
        .ground_truth
        .iter()
        .zip(&back.ground_truth)
        .map(|(a, b)| {
            let (a, b) = (a.bbox, b.bbox);
            [a.cx - b.cx, a.cy - b.cy, a.cz - b.cz, a.l - b.l, a.w - b.w, a.h - b.h, a.yaw - b.yaw]
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()))
        })
        .fold(0.0, f64::max);
    let same_difficulty = scene
        .ground_truth
        .iter()
        .zip(&back.ground_truth)
        .all(|(a, b)| a.difficulty == b.difficulty);
    println!("\nwrote {} under {}", scene.id, root.display());
    println!("{} points, {} objects; worst box error {worst:.2e}; difficulty preserved: {same_difficulty}", back.cloud.len(), back.ground_truth.len());
    Ok(())
}
