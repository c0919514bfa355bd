//! Oriented BEV and 3D IoU of two boxes, next to a sampled estimate.
//!
//! cargo run --example rotated_iou -- [yaw_degrees] [dx]

use pointdet::geometry::{bev_intersection_area, iou_3d, rotated_bev_iou, Box3D};
use pointdet::rng::seeded;
use pointdet::selfcheck::monte_carlo_bev_iou;

fn main() -> pointdet::Result<()> {
    let mut args = std::env::args().skip(1);
    let deg: f64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(30.0);
    let dx: f64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(1.0);

    let a = Box3D::new([0.0, 0.0, 0.0], [4.0, 1.8, 1.5], 0.0)?;
    let b = Box3D::new([dx, 0.3, 0.2], [4.2, 1.7, 1.6], deg.to_radians())?;
    let inter = bev_intersection_area(&a, &b);
    println!("a = {a:?}");
    println!("b = {b:?}");
    println!("BEV intersection {inter:.6} m^2, union {:.6} m^2", a.bev_area() + b.bev_area() - inter);
    println!("BEV IoU  {:.6}", rotated_bev_iou(&a, &b));
    println!("3D IoU   {:.6}", iou_3d(&a, &b));
    let mc = monte_carlo_bev_iou(&a, &b, 500, &mut seeded(0));
    println!("sampled  {mc:.6} (250k stratified samples)");
    Ok(())
}
