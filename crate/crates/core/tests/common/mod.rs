//! Independent reference implementations used by the integration tests.

#![allow(dead_code)]

use liga::assignment::{
    atss_assign_2d, Anchor2DSet, CenterMode, ClassThresholds, Gt2D, Label, ATSS_STRIDES, ATSS_TOP_K,
};
use liga::boxes::{bev_iou_rotated, Box3D, BoxBEV};
use std::f64::consts::PI;

use liga::scene::{render_depth, visible_boxes_2d, Scene, SceneGeometry};
use rand::Rng;

/// x-interval of a convex polygon on the horizontal line `y`.
fn row_span(poly: &[[f64; 2]; 4], y: f64) -> Option<[f64; 2]> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..4 {
        let (p, q) = (poly[i], poly[(i + 1) % 4]);
        if (p[1] - y) * (q[1] - y) > 0.0 || p[1] == q[1] {
            continue;
        }
        let x = p[0] + (y - p[1]) / (q[1] - p[1]) * (q[0] - p[0]);
        lo = lo.min(x);
        hi = hi.max(x);
    }
    (lo <= hi).then_some([lo, hi])
}

/// Pixel centers of column `i` (center `x0 + (i + 0.5) dx`) inside `[lo, hi]`.
fn count_centers(span: [f64; 2], x0: f64, dx: f64, n: usize) -> u64 {
    let a = ((span[0] - x0) / dx - 0.5).ceil().max(0.0);
    let b = ((span[1] - x0) / dx - 0.5).floor().min(n as f64 - 1.0);
    if b < a {
        0
    } else {
        (b - a) as u64 + 1
    }
}

/// IoU of two footprints by counting the centers of an `n x n` pixel grid
/// over their joint bounding box that fall inside each.
pub fn raster_iou(a: &BoxBEV, b: &BoxBEV, n: usize) -> f64 {
    let (ca, cb) = (a.corners(), b.corners());
    let all = ca.iter().chain(cb.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in all {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let (dx, dy) = ((x1 - x0) / n as f64, (y1 - y0) / n as f64);
    let (mut na, mut nb, mut ni) = (0u64, 0u64, 0u64);
    for j in 0..n {
        let y = y0 + (j as f64 + 0.5) * dy;
        let sa = row_span(&ca, y);
        let sb = row_span(&cb, y);
        if let Some(s) = sa {
            na += count_centers(s, x0, dx, n);
        }
        if let Some(s) = sb {
            nb += count_centers(s, x0, dx, n);
        }
        if let (Some(s), Some(t)) = (sa, sb) {
            let lo = s[0].max(t[0]);
            let hi = s[1].min(t[1]);
            if lo <= hi {
                ni += count_centers([lo, hi], x0, dx, n);
            }
        }
    }
    let union = na + nb - ni;
    if union == 0 {
        0.0
    } else {
        ni as f64 / union as f64
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Reduced fraction `p / q`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Frac(u128, u128);

impl Frac {
    fn reduced(p: u128, q: u128) -> Frac {
        let g = gcd(p, q).max(1);
        Frac(p / g, q / g)
    }

    fn add(self, o: Frac) -> Frac {
        Frac::reduced(self.0 * o.1 + o.0 * self.1, self.1 * o.1)
    }

    fn gt(self, o: Frac) -> bool {
        self.0 * o.1 > o.0 * self.1
    }
}

/// AP over recall levels k/40 computed by materializing every score cut:
/// for each level, the best precision over all top-m prefixes whose recall
/// reaches it. Kept in exact fractions until the final division.
pub fn brute_ap40(flags: &[bool], scores: &[f64], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return if flags.is_empty() { 1.0 } else { 0.0 };
    }
    // selection order: repeatedly take the highest remaining score, first index on ties
    let mut used = vec![false; scores.len()];
    let mut order = Vec::new();
    for _ in 0..scores.len() {
        let mut best: Option<usize> = None;
        for i in 0..scores.len() {
            if !used[i] && best.is_none_or(|b| scores[i] > scores[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("one left");
        used[b] = true;
        order.push(b);
    }
    let mut total = Frac(0, 1);
    for k in 1..=40u128 {
        let mut best: Option<Frac> = None;
        for m in 1..=order.len() {
            let tp = order[..m].iter().filter(|&&i| flags[i]).count() as u128;
            if tp * 40 >= k * num_gt as u128 {
                let p = Frac::reduced(tp, m as u128);
                if best.is_none_or(|b| p.gt(b)) {
                    best = Some(p);
                }
            }
        }
        if let Some(p) = best {
            total = total.add(p);
        }
    }
    let f = Frac::reduced(total.0, total.1 * 40);
    f.0 as f64 / f.1 as f64
}

/// Exhaustive IoU matching: every anchor against every gt, no pruning.
pub fn brute_assign_3d(anchors: &[Box3D], gts: &[Box3D], th: &ClassThresholds) -> Vec<Label> {
    let iou: Vec<Vec<f64>> = anchors
        .iter()
        .map(|a| {
            gts.iter()
                .map(|g| {
                    if a.class_id == g.class_id {
                        bev_iou_rotated(&a.bev(), &g.bev()).unwrap()
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let owner = |a: usize| -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (g, &v) in iou[a].iter().enumerate() {
            if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        best
    };
    let mut labels: Vec<Label> = (0..anchors.len())
        .map(|a| {
            let t = th.get(anchors[a].class_id).unwrap();
            match owner(a) {
                Some((g, v)) if v >= t.pos => Label::Positive(g),
                Some((_, v)) if v >= t.neg => Label::Ignore,
                _ => Label::Negative,
            }
        })
        .collect();
    for g in 0..gts.len() {
        let t = th.get(gts[g].class_id).unwrap();
        let mut best: Option<(usize, f64)> = None;
        for (a, row) in iou.iter().enumerate() {
            if row[g] > 0.0 && best.is_none_or(|(_, b)| row[g] > b) {
                best = Some((a, row[g]));
            }
        }
        if let Some((a, v)) = best {
            if v >= t.neg {
                labels[a] = Label::Positive(owner(a).unwrap().0);
            }
        }
    }
    labels
}

fn iou_2d(a: [f64; 4], b: [f64; 4]) -> f64 {
    let iw = a[2].min(b[2]) - a[0].max(b[0]);
    let ih = a[3].min(b[3]) - a[1].max(b[1]);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    inter / ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter)
}

/// Straightforward ATSS: per gt and level, the k nearest anchors by repeated
/// minimum extraction, a mean + sample-std threshold, the center-inside test,
/// then per anchor the qualifying gt of highest IoU (lowest index on ties).
pub fn brute_atss(set: &Anchor2DSet, gts: &[Gt2D], k: usize, mode: CenterMode) -> Vec<Option<usize>> {
    let mut claims: Vec<Vec<(usize, f64)>> = vec![Vec::new(); set.len()];
    for (g, gt) in gts.iter().enumerate() {
        let c = match mode {
            CenterMode::Reprojected3d => gt.center3d,
            CenterMode::Box2d => [(gt.bbox[0] + gt.bbox[2]) / 2.0, (gt.bbox[1] + gt.bbox[3]) / 2.0],
        };
        let mut cands: Vec<(usize, [f64; 2], f64)> = Vec::new();
        for lvl in &set.levels {
            let centers: Vec<[f64; 2]> = (0..lvl.rows * lvl.cols)
                .map(|i| {
                    let (r, col) = (i / lvl.cols, i % lvl.cols);
                    [col as f64 * lvl.stride + lvl.stride / 2.0 - 0.5, r as f64 * lvl.stride + lvl.stride / 2.0 - 0.5]
                })
                .collect();
            let mut taken = vec![false; centers.len()];
            for _ in 0..k.min(centers.len()) {
                let mut best: Option<(usize, f64)> = None;
                for (i, p) in centers.iter().enumerate() {
                    let d = (p[0] - c[0]).hypot(p[1] - c[1]);
                    if !taken[i] && best.is_none_or(|(_, b)| d < b) {
                        best = Some((i, d));
                    }
                }
                let (i, _) = best.unwrap();
                taken[i] = true;
                let p = centers[i];
                let s = lvl.size / 2.0;
                let iou = iou_2d([p[0] - s, p[1] - s, p[0] + s, p[1] + s], gt.bbox);
                cands.push((lvl.offset + i, p, iou));
            }
        }
        let n = cands.len() as f64;
        let mean = cands.iter().map(|c| c.2).sum::<f64>() / n;
        let var = if cands.len() > 1 {
            cands.iter().map(|c| (c.2 - mean) * (c.2 - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let thr = mean + var.sqrt();
        for (idx, p, iou) in cands {
            let inside = gt.bbox[0] < p[0] && p[0] < gt.bbox[2] && gt.bbox[1] < p[1] && p[1] < gt.bbox[3];
            if inside && iou > 0.0 && iou + 1e-12 >= thr {
                claims[idx].push((g, iou));
            }
        }
    }
    claims
        .into_iter()
        .map(|c| {
            let mut best: Option<(usize, f64)> = None;
            for (g, v) in c {
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            best.map(|b| b.0)
        })
        .collect()
}

/// A footprint with random center, size and yaw inside a small window.
pub fn random_bev(rng: &mut impl Rng, spread: f64) -> BoxBEV {
    BoxBEV::new(
        rng.random_range(-spread..spread),
        rng.random_range(-spread..spread),
        rng.random_range(0.3..4.0),
        rng.random_range(0.3..4.0),
        rng.random_range(-3.2..3.2),
    )
    .unwrap()
}

/// A car-sized box near `z = 10` with any yaw.
pub fn random_car(rng: &mut impl Rng, spread: f64) -> Box3D {
    Box3D::new(
        [rng.random_range(-spread..spread), 1.0, 10.0 + rng.random_range(-spread..spread)],
        [rng.random_range(3.0..4.5), rng.random_range(1.4..1.9), rng.random_range(1.3..1.7)],
        rng.random_range(-PI..PI),
        0,
    )
    .unwrap()
}

/// A 2D box inside an `h x w` image with its projected center inside it.
pub fn random_gt_2d(rng: &mut impl Rng, h: f64, w: f64) -> Gt2D {
    let (bw, bh) = (rng.random_range(4.0..30.0), rng.random_range(4.0..20.0));
    let u0 = rng.random_range(0.0..w - bw);
    let v0 = rng.random_range(0.0..h - bh);
    let bbox = [u0, v0, u0 + bw, v0 + bh];
    Gt2D {
        bbox,
        center3d: [rng.random_range(u0..u0 + bw), rng.random_range(v0..v0 + bh)],
    }
}

/// A scene holding exactly `boxes` in the desk geometry.
pub fn scene_with(boxes: Vec<Box3D>) -> Scene {
    Scene {
        id: "hand".into(),
        seed: 1,
        geometry: SceneGeometry::desk(),
        boxes,
    }
}

/// ATSS positives of a partly hidden car under both center rules.
pub struct OcclusionCase {
    /// Horizontal pixel gap between the visible box center and the
    /// reprojected 3D center.
    pub center_gap: f64,
    pub by_box: Vec<usize>,
    pub by_center: Vec<usize>,
}

/// A near car hides the left part of a far one.
pub fn occlusion_case() -> OcclusionCase {
    let near = Box3D::new([-1.2, 0.87, 8.0], [3.9, 1.6, 1.56], 0.0, 0).unwrap();
    let far = Box3D::new([1.5, 0.87, 14.0], [3.9, 1.6, 1.56], 0.0, 0).unwrap();
    let scene = scene_with(vec![near, far]);
    let g = scene.geometry;
    let depth = render_depth(&scene).unwrap();
    let boxes = visible_boxes_2d(&depth, 2);
    let gt = Gt2D {
        bbox: boxes[1].expect("far car is partly visible"),
        center3d: g.rig.reproject_box_center(&far).unwrap(),
    };
    let [h, w] = g.image;
    let strides: Vec<f64> = ATSS_STRIDES.iter().map(|s| s / g.rig.stride()).collect();
    let set = Anchor2DSet::new(h, w, &strides, 8.0).unwrap();
    let positives = |mode| -> Vec<usize> {
        atss_assign_2d(&set, &[gt], ATSS_TOP_K, mode)
            .unwrap()
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|_| i))
            .collect()
    };
    OcclusionCase {
        center_gap: (gt.box_center()[0] - gt.center3d[0]).abs(),
        by_box: positives(CenterMode::Box2d),
        by_center: positives(CenterMode::Reprojected3d),
    }
}
