//! SECOND-style detection losses. Every term is normalized by the number of
//! positive anchors, floored at one.

use crate::boxes::{decode_params, iou3d, iou3d_params, Box3D, Dual, Scalar};
use crate::error::{ensure, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;
pub const SMOOTH_L1_BETA: f64 = 1.0 / 9.0;

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Loss and derivative of the sigmoid focal loss for one logit.
fn focal_one(x: f64, positive: bool) -> (f64, f64) {
    let p = sigmoid(x);
    let (a, g) = (FOCAL_ALPHA, FOCAL_GAMMA);
    if positive {
        let log_p = -softplus(-x);
        let m = (1.0 - p).powf(g);
        (-a * m * log_p, a * m * (g * p * log_p - (1.0 - p)))
    } else {
        let log_q = -softplus(x);
        let m = p.powf(g);
        (-(1.0 - a) * m * log_q, -(1.0 - a) * m * (g * (1.0 - p) * log_q - p))
    }
}

/// Sigmoid focal loss over all logits. `labels` are 0 or 1; entries with
/// zero `weights` are ignored.
pub fn focal_cls_loss(
    tape: &mut Tape,
    logits: Var,
    labels: &[f64],
    weights: &[f64],
    num_pos: usize,
) -> Result<Var> {
    let tl = tape.shared(logits);
    ensure!(
        labels.len() == tl.numel() && weights.len() == tl.numel(),
        Shape,
        "{} logits, {} labels, {} weights",
        tl.numel(),
        labels.len(),
        weights.len()
    );
    let inv = 1.0 / num_pos.max(1) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; tl.numel()];
    for (i, &x) in tl.data().iter().enumerate() {
        if weights[i] == 0.0 {
            continue;
        }
        let (l, d) = focal_one(x, labels[i] > 0.5);
        loss += weights[i] * l;
        grad[i] = weights[i] * d * inv;
    }
    loss *= inv;
    Ok(tape.custom(
        &[logits],
        Tensor::scalar(loss),
        Box::new(move |g, _| vec![grad.iter().map(|d| d * g[0]).collect()]),
    ))
}

/// Smooth-L1 with the module's beta: value and derivative.
pub fn smooth_l1(e: f64) -> (f64, f64) {
    let b = SMOOTH_L1_BETA;
    if e.abs() < b {
        (0.5 * e * e / b, e / b)
    } else {
        (e.abs() - 0.5 * b, e.signum())
    }
}

fn check_rows(tape: &Tape, var: Var, width: usize, what: &str) -> Result<usize> {
    let shape = tape.shape(var);
    ensure!(
        shape.len() == 2 && shape[1] == width,
        Shape,
        "{what} must be [A, {width}], got {:?}",
        shape
    );
    Ok(shape[0])
}

/// Smooth-L1 between predicted residual rows `pred[A, 7]` and targets at the
/// given positive anchors.
pub fn l1_box_loss(tape: &mut Tape, pred: Var, positives: &[(usize, [f64; 7])]) -> Result<Var> {
    let rows = check_rows(tape, pred, 7, "box residuals")?;
    ensure!(
        positives.iter().all(|p| p.0 < rows),
        OutOfRange,
        "positive anchor index out of range"
    );
    let tp = tape.shared(pred);
    let inv = 1.0 / positives.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; tp.numel()];
    for (a, target) in positives {
        for k in 0..7 {
            let i = a * 7 + k;
            let (l, d) = smooth_l1(tp.data()[i] - target[k]);
            loss += l;
            grad[i] += d * inv;
        }
    }
    loss *= inv;
    Ok(tape.custom(
        &[pred],
        Tensor::scalar(loss),
        Box::new(move |g, _| vec![grad.iter().map(|d| d * g[0]).collect()]),
    ))
}

/// Two-way softmax cross-entropy on direction logits `[A, 2]` at positives.
pub fn dir_cls_loss(tape: &mut Tape, logits: Var, positives: &[(usize, usize)]) -> Result<Var> {
    let rows = check_rows(tape, logits, 2, "direction logits")?;
    ensure!(
        positives.iter().all(|&(a, b)| a < rows && b < 2),
        OutOfRange,
        "direction target out of range"
    );
    let tl = tape.shared(logits);
    let inv = 1.0 / positives.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; tl.numel()];
    for &(a, bin) in positives {
        let (x0, x1) = (tl.data()[2 * a], tl.data()[2 * a + 1]);
        let m = x0.max(x1);
        let lse = m + ((x0 - m).exp() + (x1 - m).exp()).ln();
        let chosen = if bin == 0 { x0 } else { x1 };
        loss += lse - chosen;
        let p1 = sigmoid(x1 - x0);
        let probs = [1.0 - p1, p1];
        for k in 0..2 {
            let y = if k == bin { 1.0 } else { 0.0 };
            grad[2 * a + k] += (probs[k] - y) * inv;
        }
    }
    loss *= inv;
    Ok(tape.custom(
        &[logits],
        Tensor::scalar(loss),
        Box::new(move |g, _| vec![grad.iter().map(|d| d * g[0]).collect()]),
    ))
}

/// Mean of `1 - IoU_3D` over matched pairs; zero for no pairs.
pub fn rotated_iou_loss(pred: &[Box3D], gt: &[Box3D]) -> Result<f64> {
    ensure!(
        pred.len() == gt.len(),
        Shape,
        "{} predictions for {} targets",
        pred.len(),
        gt.len()
    );
    if pred.is_empty() {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        acc += 1.0 - iou3d(p, g)?;
    }
    Ok(acc / pred.len() as f64)
}

/// Taped IoU loss on predicted residuals `pred[A, 7]`. Each positive names
/// its anchor row, the anchor box and the matched ground truth; the gradient
/// runs through decoding and polygon clipping with dual numbers.
pub fn iou_loss_residuals(
    tape: &mut Tape,
    pred: Var,
    positives: &[(usize, Box3D, Box3D)],
) -> Result<Var> {
    let rows = check_rows(tape, pred, 7, "box residuals")?;
    let tp = tape.shared(pred);
    let inv = 1.0 / positives.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; tp.numel()];
    for (a, anchor, gt) in positives {
        ensure!(*a < rows, OutOfRange, "anchor row {a} of {rows}");
        anchor.validate()?;
        gt.validate()?;
        let r: [Dual<7>; 7] = std::array::from_fn(|k| Dual::variable(tp.data()[a * 7 + k], k));
        let decoded = decode_params(&r, &anchor.params());
        let g = gt.params().map(Dual::<7>::cst);
        let iou = iou3d_params(&decoded, &g);
        ensure!(iou.val().is_finite(), NonFinite, "IoU of anchor {a} is not finite");
        loss += 1.0 - iou.val();
        for k in 0..7 {
            grad[a * 7 + k] -= iou.eps[k] * inv;
        }
    }
    loss *= inv;
    Ok(tape.custom(
        &[pred],
        Tensor::scalar(loss),
        Box::new(move |g, _| vec![grad.iter().map(|d| d * g[0]).collect()]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_l1_pieces() {
        assert_eq!(smooth_l1(0.0).0, 0.0);
        let b = SMOOTH_L1_BETA;
        assert!((smooth_l1(2.0 * b).0 - 1.5 * b).abs() < 1e-15);
        let below = smooth_l1(b - 1e-12).0;
        let above = smooth_l1(b + 1e-12).0;
        assert!((below - above).abs() < 1e-10);
    }

    #[test]
    fn saturated_focal_is_near_zero() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_slice(&[30.0, -30.0, -25.0]));
        let l = focal_cls_loss(&mut tape, x, &[1.0, 0.0, 0.0], &[1.0; 3], 1).unwrap();
        assert!(tape.value(l).item().unwrap() < 1e-3);
    }

    #[test]
    fn focal_reference_value() {
        // x = 0: p = 0.5, positive term alpha * 0.25 * ln 2
        let (l, _) = focal_one(0.0, true);
        assert!((l - 0.25 * 0.25 * std::f64::consts::LN_2).abs() < 1e-15);
        let (l, _) = focal_one(0.0, false);
        assert!((l - 0.75 * 0.25 * std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn iou_loss_cases() {
        let a = Box3D::new([0.0, 0.0, 5.0], [1.0; 3], 0.0, 0).unwrap();
        let b = Box3D::new([0.5, 0.0, 5.0], [1.0; 3], 0.0, 0).unwrap();
        let far = Box3D::new([9.0, 0.0, 5.0], [1.0; 3], 0.0, 0).unwrap();
        assert_eq!(rotated_iou_loss(&[a], &[a]).unwrap(), 0.0);
        assert_eq!(rotated_iou_loss(&[a], &[far]).unwrap(), 1.0);
        assert!((rotated_iou_loss(&[a], &[b]).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rotated_iou_loss(&[], &[]).unwrap(), 0.0);
        let mut bad = a;
        bad.l = -1.0;
        assert!(rotated_iou_loss(&[bad], &[a]).is_err());
    }

    #[test]
    fn taped_iou_loss_matches_plain() {
        let anchor = Box3D::new([0.0, 1.0, 10.0], [3.9, 1.6, 1.56], 0.0, 0).unwrap();
        let gt = Box3D::new([0.3, 1.1, 10.4], [4.1, 1.7, 1.5], 0.2, 0).unwrap();
        let r = [0.05, -0.1, 0.02, 0.03, -0.02, 0.01, 0.1];
        let mut tape = Tape::new();
        let p = tape.param(Tensor::new(vec![1, 7], r.to_vec()).unwrap());
        let l = iou_loss_residuals(&mut tape, p, &[(0, anchor, gt)]).unwrap();
        let decoded = crate::boxes::decode_residuals(&r, &anchor).unwrap();
        let plain = rotated_iou_loss(&[decoded], &[gt]).unwrap();
        assert!((tape.value(l).item().unwrap() - plain).abs() < 1e-12);
    }
}
