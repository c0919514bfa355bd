//! AP of each NMS ranking rule on synthetic detection sets.
//!
//! cargo run --release --example nms_compare -- [sets]

use pointdet::bench::detections::{nms_comparison, DetectionBenchConfig};
use pointdet::nms::NmsStrategy;

fn main() -> pointdet::Result<()> {
    let n: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    let config = DetectionBenchConfig::default();
    let seeds: Vec<u64> = (0..n).collect();
    let comparison = nms_comparison(&config, &seeds)?;
    let results = &comparison.sets;

    print!("{:>5}", "seed");
    for s in NmsStrategy::ALL {
        print!(" {:>13}", s.name());
    }
    println!();
    let mut mean = [0.0; 5];
    for r in results {
        print!("{:>5}", r.seed);
        for (k, s) in NmsStrategy::ALL.iter().enumerate() {
            let ap = r.ap(*s).and_then(|a| a.moderate).unwrap_or(f64::NAN);
            mean[k] += ap / results.len() as f64;
            print!(" {ap:>13.4}");
        }
        println!();
    }
    print!("{:>5}", "mean");
    for m in mean {
        print!(" {m:>13.4}");
    }
    println!();
    print!("{:>5}", "all");
    for s in NmsStrategy::ALL {
        let ap = comparison.pooled_ap(s).and_then(|a| a.moderate).unwrap_or(f64::NAN);
        print!(" {ap:>13.4}");
    }
    println!();
    Ok(())
}
