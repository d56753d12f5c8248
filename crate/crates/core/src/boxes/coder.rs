use super::dual::Scalar;
use super::{normalize_angle, Box3D};
use crate::error::Result;

/// `[dx, dy, dz, dl, dw, dh, dtheta]` relative to an anchor.
pub type Residuals = [f64; 7];

pub fn encode_residuals(b: &Box3D, anchor: &Box3D) -> Result<Residuals> {
    b.validate()?;
    anchor.validate()?;
    let da = anchor.l.hypot(anchor.w);
    Ok([
        (b.x - anchor.x) / da,
        (b.y - anchor.y) / anchor.h,
        (b.z - anchor.z) / da,
        (b.l / anchor.l).ln(),
        (b.w / anchor.w).ln(),
        (b.h / anchor.h).ln(),
        b.theta - anchor.theta,
    ])
}

pub fn decode_residuals(r: &Residuals, anchor: &Box3D) -> Result<Box3D> {
    anchor.validate()?;
    let mut p = decode_params(r, &anchor.params());
    p[6] = normalize_angle(p[6]);
    Box3D::from_params(p, anchor.class_id)
}

/// Decoded `[x, y, z, l, w, h, theta]` without angle wrapping.
pub(crate) fn decode_params<S: Scalar>(r: &[S; 7], a: &[f64; 7]) -> [S; 7] {
    let da = S::cst(a[3].hypot(a[4]));
    [
        r[0] * da + S::cst(a[0]),
        r[1] * S::cst(a[5]) + S::cst(a[1]),
        r[2] * da + S::cst(a[2]),
        r[3].exp() * S::cst(a[3]),
        r[4].exp() * S::cst(a[4]),
        r[5].exp() * S::cst(a[5]),
        r[6] + S::cst(a[6]),
    ]
}

/// Two-bin direction target: 1 when the yaw is positive.
pub fn direction_bin(theta: f64) -> usize {
    usize::from(normalize_angle(theta) > 0.0)
}
