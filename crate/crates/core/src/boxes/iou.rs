use super::dual::Scalar;
use super::polygon::{polygon_area, polygon_clip};
use super::{Box3D, BoxBEV};
use crate::error::Result;

/// Footprint corners of `[x, y, z, l, w, h, theta]` as `[x, z]`,
/// counter-clockwise.
pub(crate) fn bev_corners_of<S: Scalar>(p: &[S; 7]) -> [[S; 2]; 4] {
    let half = S::cst(0.5);
    let (hl, hw) = (p[3] * half, p[4] * half);
    let (s, c) = (p[6].sin(), p[6].cos());
    let signs = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];
    signs.map(|(a, b)| {
        let lx = hl * S::cst(a);
        let lz = hw * S::cst(b);
        [p[0] + lx * c + lz * s, p[2] - lx * s + lz * c]
    })
}

pub fn bev_intersection_area<S: Scalar>(a: &[[S; 2]; 4], b: &[[S; 2]; 4]) -> S {
    let poly = polygon_clip(a, b);
    if poly.is_empty() {
        S::cst(0.0)
    } else {
        polygon_area(&poly).max_by_val(S::cst(0.0))
    }
}

pub fn bev_iou_rotated(a: &BoxBEV, b: &BoxBEV) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let inter = bev_intersection_area(&a.corners(), &b.corners());
    let union = a.area() + b.area() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

pub fn iou3d(a: &Box3D, b: &Box3D) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(iou3d_params(&a.params(), &b.params()).clamp(0.0, 1.0))
}

/// 3D IoU of two boxes given as `[x, y, z, l, w, h, theta]`; generic over
/// the scalar type so it can carry tangents.
pub fn iou3d_params<S: Scalar>(a: &[S; 7], b: &[S; 7]) -> S {
    let half = S::cst(0.5);
    let top = (a[1] - a[5] * half).max_by_val(b[1] - b[5] * half);
    let bottom = (a[1] + a[5] * half).min_by_val(b[1] + b[5] * half);
    let overlap = (bottom - top).max_by_val(S::cst(0.0));
    if overlap.val() <= 0.0 {
        return S::cst(0.0);
    }
    let inter = bev_intersection_area(&bev_corners_of(a), &bev_corners_of(b)) * overlap;
    let vol_a = a[3] * a[4] * a[5];
    let vol_b = b[3] * b[4] * b[5];
    inter / (vol_a + vol_b - inter)
}
