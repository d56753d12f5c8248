//! Triangle targets of the uni-modal depth loss and the loss of a few
//! candidate distributions at one pixel.

use liga::geometry::DepthBinning;
use liga::losses::{triangle_weights, unimodal_depth_loss_value};
use liga::tensor::Tensor;

fn main() -> liga::Result<()> {
    let b = DepthBinning::new(2.0, 0.5, 48)?;
    let z = 7.3;
    let target = triangle_weights(z, &b);
    println!("z* = {z}: target {target:?}");

    let d = b.count();
    let z_star = Tensor::new(vec![1, 1], vec![z])?;
    let valid = Tensor::new(vec![1, 1], vec![1.0])?;
    let column = |p: Vec<f64>| Tensor::new(vec![d, 1, 1], p);
    let mut exact = vec![0.0; d];
    for &(w, t) in &target {
        exact[w] = t;
    }
    let mut nearest = vec![0.0; d];
    nearest[b.bin_of_depth(z).round() as usize] = 1.0;
    let uniform = vec![1.0 / d as f64; d];
    for (name, p) in [("triangle target", exact), ("nearest bin", nearest), ("uniform", uniform)] {
        let loss = unimodal_depth_loss_value(&column(p)?, &z_star, &valid, &b)?;
        println!("{name:16} loss {loss:.4}");
    }
    Ok(())
}
