//! Convex polygon clipping (Sutherland-Hodgman) and shoelace areas.

use super::dual::Scalar;

/// Tolerance of the inside test, in squared meters of cross product.
pub const INSIDE_EPS: f64 = 1e-9;

/// Signed shoelace area; positive for counter-clockwise vertex order.
pub fn polygon_area<S: Scalar>(poly: &[[S; 2]]) -> S {
    let n = poly.len();
    let mut acc = S::cst(0.0);
    if n < 3 {
        return acc;
    }
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        acc = acc + (p[0] * q[1] - q[0] * p[1]);
    }
    acc * S::cst(0.5)
}

fn cross<S: Scalar>(a: [S; 2], b: [S; 2], p: [S; 2]) -> S {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Intersection of two convex counter-clockwise polygons, counter-clockwise.
/// Returns an empty list when they do not overlap.
pub fn polygon_clip<S: Scalar>(subject: &[[S; 2]], clip: &[[S; 2]]) -> Vec<[S; 2]> {
    let mut output: Vec<[S; 2]> = subject.to_vec();
    let m = clip.len();
    for e in 0..m {
        if output.is_empty() {
            break;
        }
        let a = clip[e];
        let b = clip[(e + 1) % m];
        let input = std::mem::take(&mut output);
        let n = input.len();
        for i in 0..n {
            let cur = input[i];
            let prev = input[(i + n - 1) % n];
            let c_cur = cross(a, b, cur);
            let c_prev = cross(a, b, prev);
            let cur_in = c_cur.val() >= -INSIDE_EPS;
            let prev_in = c_prev.val() >= -INSIDE_EPS;
            if cur_in {
                if !prev_in {
                    output.push(intersect(prev, cur, c_prev, c_cur));
                }
                output.push(cur);
            } else if prev_in {
                output.push(intersect(prev, cur, c_prev, c_cur));
            }
        }
    }
    if output.len() < 3 {
        output.clear();
    }
    output
}

fn intersect<S: Scalar>(p: [S; 2], q: [S; 2], cp: S, cq: S) -> [S; 2] {
    let t = cp / (cp - cq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}
