//! Ground-truth sampling, per-box jitter, flip, rotation and scaling on a
//! synthetic scene.
//!
//! cargo run --release --example augmentation -- [seed]

use pointdet::dataio::augment::{augment, build_gt_database, AugmentConfig};
use pointdet::dataio::synth::{synth_scene, SynthConfig};
use pointdet::rng::derive_seed;

fn main() -> pointdet::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(5);
    let synth = SynthConfig {
        objects: 4,
        ..SynthConfig::default()
    };
    let scenes = (0..6)
        .map(|k| synth_scene(&synth, &format!("{k:06}"), derive_seed(seed, k)))
        .collect::<pointdet::Result<Vec<_>>>()?;
    let db = build_gt_database(&scenes);
    println!("database: {} objects from {} scenes", db.len(), scenes.len());

    let config = AugmentConfig::default();
    for k in 0..3 {
        let (out, rec) = augment(&scenes[0], &config, &db, derive_seed(seed, 100 + k))?;
        println!(
            "pass {k}: +{} sampled, {} jittered, flipped {}, yaw {:+.3}, scale {:.3} -> {} objects, {} points",
            rec.inserted,
            rec.jittered,
            rec.flipped,
            rec.global_yaw,
            rec.global_scale,
            out.ground_truth.len(),
            out.cloud.len()
        );
    }
    Ok(())
}
