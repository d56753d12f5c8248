use crate::error::{ensure, Result};
use crate::geometry::DepthBinning;
use crate::tensor::{Tape, Tensor, Var};

/// Floor applied to probabilities inside the logarithm.
pub const LOG_EPS: f64 = 1e-12;

/// Non-zero bins of the triangle target `max(1 - |d* - d(w)| / v_d, 0)`.
pub fn triangle_weights(z_star: f64, binning: &DepthBinning) -> Vec<(usize, f64)> {
    let t = binning.bin_of_depth(z_star);
    if !t.is_finite() {
        return Vec::new();
    }
    let lo = t.floor();
    let mut out = Vec::with_capacity(2);
    for w in [lo, lo + 1.0] {
        if w < 0.0 || w >= binning.count() as f64 {
            continue;
        }
        let weight = 1.0 - (t - w).abs();
        if weight > 0.0 {
            out.push((w as usize, weight));
        }
    }
    out
}

fn targets(
    shape: &[usize],
    z_star: &Tensor,
    valid: &Tensor,
    binning: &DepthBinning,
) -> Result<(Vec<(usize, f64)>, usize)> {
    ensure!(
        shape.len() == 3 && shape[0] == binning.count(),
        Shape,
        "depth distribution {:?} does not have {} bins",
        shape,
        binning.count()
    );
    let plane = &shape[1..];
    ensure!(
        z_star.shape() == plane && valid.shape() == plane,
        Shape,
        "depth map {:?} / mask {:?} do not match distribution plane {:?}",
        z_star.shape(),
        valid.shape(),
        plane
    );
    let n = plane[0] * plane[1];
    let mut taps = Vec::new();
    let mut n_gt = 0;
    for p in 0..n {
        if valid.data()[p] == 0.0 {
            continue;
        }
        n_gt += 1;
        for (w, wt) in triangle_weights(z_star.data()[p], binning) {
            taps.push((w * n + p, wt));
        }
    }
    Ok((taps, n_gt))
}

/// Mean over valid pixels of `-sum_w t_w log P(w)`; zero when no pixel is
/// valid.
pub fn unimodal_depth_loss(
    tape: &mut Tape,
    prob: Var,
    z_star: &Tensor,
    valid: &Tensor,
    binning: &DepthBinning,
) -> Result<Var> {
    let tp = tape.shared(prob);
    let (taps, n_gt) = targets(tp.shape(), z_star, valid, binning)?;
    if n_gt == 0 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let inv = 1.0 / n_gt as f64;
    let p = tp.data();
    let loss: f64 = taps
        .iter()
        .map(|&(i, wt)| -wt * p[i].max(LOG_EPS).ln())
        .sum::<f64>()
        * inv;
    let n = tp.numel();
    let backward = Box::new(move |g: &[f64], _: &[bool]| {
        let p = tp.data();
        let mut gp = vec![0.0; n];
        for &(i, wt) in &taps {
            if p[i] > LOG_EPS {
                gp[i] -= g[0] * wt * inv / p[i];
            }
        }
        vec![gp]
    });
    Ok(tape.custom(&[prob], Tensor::scalar(loss), backward))
}

/// Untaped [`unimodal_depth_loss`].
pub fn unimodal_depth_loss_value(
    prob: &Tensor,
    z_star: &Tensor,
    valid: &Tensor,
    binning: &DepthBinning,
) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(prob.clone());
    let l = unimodal_depth_loss(&mut tape, p, z_star, valid, binning)?;
    tape.value(l).item()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(p: &[f64]) -> Tensor {
        Tensor::new(vec![p.len(), 1, 1], p.to_vec()).unwrap()
    }

    fn one(v: f64) -> Tensor {
        Tensor::new(vec![1, 1], vec![v]).unwrap()
    }

    #[test]
    fn closed_form_cases() {
        let b = DepthBinning::new(2.0, 0.5, 4).unwrap();
        let on_bin = unimodal_depth_loss_value(&column(&[0.0, 1.0, 0.0, 0.0]), &one(2.5), &one(1.0), &b);
        assert!(on_bin.unwrap().abs() < 1e-15);
        let mid = unimodal_depth_loss_value(&column(&[0.0, 0.5, 0.5, 0.0]), &one(2.75), &one(1.0), &b);
        assert!((mid.unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let uniform = unimodal_depth_loss_value(&column(&[0.25; 4]), &one(3.0), &one(1.0), &b);
        assert!((uniform.unwrap() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn invalid_pixels_are_ignored() {
        let b = DepthBinning::new(2.0, 0.5, 4).unwrap();
        let l = unimodal_depth_loss_value(&column(&[0.25; 4]), &one(3.0), &one(0.0), &b);
        assert_eq!(l.unwrap(), 0.0);
    }

    #[test]
    fn triangle_weights_sum_to_one_inside() {
        let b = DepthBinning::new(2.0, 0.3, 192).unwrap();
        for z in [2.0, 2.1, 17.77, 59.3] {
            let s: f64 = triangle_weights(z, &b).iter().map(|t| t.1).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let t = triangle_weights(1.85, &b);
        assert_eq!(t.len(), 1);
        assert!((t[0].1 - 0.5).abs() < 1e-9);
    }
}
