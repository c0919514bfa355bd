//! Proposal recall for spherical vs cuboid anchors on synthetic scenes.
//!
//! cargo run --release --example proposal_recall -- [scenes] [seed]

use pointdet::bench::recall::{recall_comparison, RecallConfig};
use pointdet::dataio::synth::{synth_scene, SynthConfig};
use pointdet::rng::derive_seed;

fn main() -> pointdet::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(20);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(0);

    let synth = SynthConfig::default();
    let scenes = (0..n)
        .map(|k| synth_scene(&synth, &format!("{k:06}"), derive_seed(seed, k)))
        .collect::<pointdet::Result<Vec<_>>>()?;
    let config = RecallConfig::default();
    println!(
        "{} scenes, top {} proposals, BEV IoU {}",
        scenes.len(),
        config.top_k,
        config.iou_threshold
    );
    println!("{:<10} {:>9} {:>7} {:>9} {:>7}", "mode", "anchors", "kept", "matched", "recall");
    for m in recall_comparison(&scenes, &config, seed)? {
        println!(
            "{:<10} {:>9} {:>7} {:>5}/{:<3} {:>7.4}",
            m.mode.name(),
            m.anchors,
            m.kept_anchors,
            m.matched,
            m.ground_truth,
            m.recall.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
