//! Rotated BEV IoU on the analytic cases and 3D IoU of two yawed cars.

use std::f64::consts::FRAC_PI_4;

use liga::boxes::{bev_iou_rotated, iou3d, Box3D, BoxBEV};

fn main() -> liga::Result<()> {
    let sq = BoxBEV::new(0.0, 0.0, 2.0, 2.0, 0.0)?;
    let cases = [
        ("identical", sq, 1.0),
        ("half offset", BoxBEV::new(1.0, 0.0, 2.0, 2.0, 0.0)?, 1.0 / 3.0),
        ("rotated 45 deg", BoxBEV::new(0.0, 0.0, 2.0, 2.0, FRAC_PI_4)?, 2f64.sqrt() / 2.0),
    ];
    for (name, other, want) in cases {
        println!("{name:15} IoU {:.12} (closed form {want:.12})", bev_iou_rotated(&sq, &other)?);
    }
    let a = Box3D::new([0.0, 1.0, 10.0], [3.9, 1.6, 1.56], 0.3, 0)?;
    let b = Box3D::new([0.4, 1.2, 10.3], [4.1, 1.7, 1.5], 0.5, 0)?;
    println!("car pair: BEV IoU {:.4}, 3D IoU {:.4}", bev_iou_rotated(&a.bev(), &b.bev())?, iou3d(&a, &b)?);
    Ok(())
}
