//! Loss values on a few inputs and a central-difference check of every
//! analytic gradient.
//!
//! cargo run --example loss_gradients

use pointdet::geometry::Box3D;
use pointdet::losses::{corner_loss, focal_loss, smooth_l1, softmax_ce, LossConfig};
use pointdet::selfcheck::{loss_gradient_check, SelfcheckConfig};

fn main() -> pointdet::Result<()> {
    println!("smooth_l1(0.5 | 0)     = {}", smooth_l1(&[0.5], &[0.0], 1.0)?.value);
    println!("smooth_l1(2.0 | 0)     = {}", smooth_l1(&[2.0], &[0.0], 1.0)?.value);
    println!("focal(p=0.5)           = {:.15} (0.0625 ln 2 = {:.15})", focal_loss(0.5, 0.25, 2.0).value, 0.0625 * 2f64.ln());
    println!("softmax_ce([0;12], 3)  = {:.6}", softmax_ce(&[0.0; 12], 3)?.value);
    let gt = Box3D::new([10.0, 2.0, -1.0], [3.9, 1.6, 1.5], 0.3)?;
    let pred = Box3D::new([10.2, 1.9, -1.0], [4.1, 1.6, 1.5], 0.5)?;
    let c = corner_loss(&pred, &gt);
    println!("corner(pred, gt)       = {:.6}, d/d(yaw) = {:.6}", c.value, c.gradient[6]);

    println!();
    let config = SelfcheckConfig::default();
    for r in loss_gradient_check(&config, &LossConfig::default()) {
        println!(
            "{} {:<24} {:>3} cases  max rel err {:.2e}",
            if r.passed { "ok  " } else { "FAIL" },
            r.name,
            r.cases,
            r.max_error
        );
    }
    Ok(())
}
