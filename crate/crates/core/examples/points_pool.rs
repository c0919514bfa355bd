//! Pools the interior points of each ground-truth box into the fixed voxel
//! grid and routes a gradient back to the points.
//!
//! cargo run --release --example points_pool -- [seed]

use pointdet::dataio::synth::{synth_scene, SynthConfig};
use pointdet::points_pool::{pool_backward, pool_forward, reference_encoder, PoolConfig};
use pointdet::rng::hash_unit;

fn main() -> pointdet::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(3);
    let scene = synth_scene(&SynthConfig::default(), "000000", seed)?;
    let config = PoolConfig::default();
    let w = config.feature_width;
    let features: Vec<f64> = (0..scene.cloud.len() * w).map(|i| hash_unit(seed, i as u64)).collect();
    println!(
        "N = {}, grid {:?}, {} slots per voxel, {} channels",
        config.n_samples,
        config.grid,
        config.slots_per_voxel,
        config.channels()
    );
    println!("{:>3} {:>10} {:>9} {:>8} {:>9} {:>11}", "gt", "difficulty", "occupied", "voxels", "max/voxel", "resampled");
    for (g, gt) in scene.ground_truth.iter().enumerate() {
        let (tensor, routing) = pool_forward(&scene.cloud, &features, &gt.bbox, &config, seed + g as u64)?;
        let occ: Vec<usize> = (0..config.voxels()).map(|v| tensor.voxel_occupancy(v)).collect();
        println!(
            "{g:>3} {:>10} {:>9} {:>8} {:>9} {:>11}",
            gt.difficulty.name(),
            tensor.occupied_slots(),
            occ.iter().filter(|&&n| n > 0).count(),
            occ.iter().max().unwrap_or(&0),
            tensor.resampled
        );
        if g == 0 {
            let encoded = reference_encoder(&tensor);
            let grad = pool_backward(&vec![1.0; tensor.values.len()], &routing)?;
            let touched = grad.chunks(w).filter(|c| c.iter().any(|v| *v != 0.0)).count();
            println!("    encoder output {} values; gradient reaches {touched} points", encoded.len());
        }
    }
    Ok(())
}
