//! Adaptive training sample selection for the 2D head, with candidates
//! ranked by distance to the reprojected 3D box center.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Pyramid strides in input-image pixels.
pub const ATSS_STRIDES: [f64; 5] = [8.0, 16.0, 32.0, 64.0, 128.0];
pub const ATSS_TOP_K: usize = 9;

/// Anchors of one pyramid level, in feature pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Level2D {
    pub stride: f64,
    pub size: f64,
    pub rows: usize,
    pub cols: usize,
    /// First flat index of this level.
    pub offset: usize,
}

impl Level2D {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn center(&self, local: usize) -> [f64; 2] {
        let (r, c) = (local / self.cols, local % self.cols);
        [(c as f64 + 0.5) * self.stride - 0.5, (r as f64 + 0.5) * self.stride - 0.5]
    }

    /// `[u0, v0, u1, v1]` of a square anchor.
    pub fn anchor_box(&self, local: usize) -> [f64; 4] {
        let [u, v] = self.center(local);
        let h = 0.5 * self.size;
        [u - h, v - h, u + h, v + h]
    }
}

/// One square anchor per cell per level; flat indices run over levels in
/// order, row-major within a level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anchor2DSet {
    pub levels: Vec<Level2D>,
}

impl Anchor2DSet {
    /// Levels at `strides` (feature pixels) over a `height x width` map, each
    /// with anchor side `scale * stride`.
    pub fn new(height: usize, width: usize, strides: &[f64], scale: f64) -> Result<Self> {
        ensure!(height > 0 && width > 0, InvalidArgument, "empty feature map");
        ensure!(scale > 0.0, InvalidArgument, "anchor scale must be positive");
        let mut levels = Vec::with_capacity(strides.len());
        let mut offset = 0;
        for &stride in strides {
            ensure!(stride > 0.0, InvalidArgument, "stride must be positive");
            let rows = (height as f64 / stride).ceil() as usize;
            let cols = (width as f64 / stride).ceil() as usize;
            levels.push(Level2D {
                stride,
                size: scale * stride,
                rows,
                cols,
                offset,
            });
            offset += rows * cols;
        }
        Ok(Anchor2DSet { levels })
    }

    pub fn len(&self) -> usize {
        self.levels.iter().map(Level2D::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A ground-truth object for the 2D head.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gt2D {
    /// Visible `[u0, v0, u1, v1]` in feature pixels.
    pub bbox: [f64; 4],
    /// Reprojected 3D box center.
    pub center3d: [f64; 2],
}

impl Gt2D {
    pub fn box_center(&self) -> [f64; 2] {
        [0.5 * (self.bbox[0] + self.bbox[2]), 0.5 * (self.bbox[1] + self.bbox[3])]
    }
}

/// Which point ranks the candidates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CenterMode {
    Reprojected3d,
    Box2d,
}

pub fn box_iou_2d(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = w * h;
    let area = |r: &[f64; 4]| (r[2] - r[0]).max(0.0) * (r[3] - r[1]).max(0.0);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Slack on the `IoU >= mean + std` test so equal IoUs pass despite rounding
/// in the mean.
const THRESHOLD_SLACK: f64 = 1e-12;

/// Per-anchor gt index (`None` for negatives).
///
/// For every gt, the `k` anchors per level closest to the ranking center are
/// candidates; those whose IoU reaches mean + std of the candidate IoUs and
/// whose center lies strictly inside the gt box become positive. An anchor
/// claimed twice goes to the gt with the higher IoU, then the lower index.
pub fn atss_assign_2d(
    set: &Anchor2DSet,
    gts: &[Gt2D],
    k: usize,
    mode: CenterMode,
) -> Result<Vec<Option<usize>>> {
    ensure!(k >= 1, InvalidArgument, "ATSS needs k >= 1");
    let mut best: Vec<(f64, Option<usize>)> = vec![(0.0, None); set.len()];
    for (g, gt) in gts.iter().enumerate() {
        let c = match mode {
            CenterMode::Reprojected3d => gt.center3d,
            CenterMode::Box2d => gt.box_center(),
        };
        let mut candidates: Vec<(usize, f64)> = Vec::new();
        for level in &set.levels {
            let mut dist: Vec<(f64, usize)> = (0..level.len())
                .map(|i| {
                    let p = level.center(i);
                    ((p[0] - c[0]).hypot(p[1] - c[1]), i)
                })
                .collect();
            dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for &(_, i) in dist.iter().take(k) {
                candidates.push((level.offset + i, box_iou_2d(&level.anchor_box(i), &gt.bbox)));
            }
        }
        let n = candidates.len() as f64;
        let mean = candidates.iter().map(|c| c.1).sum::<f64>() / n;
        let std = if candidates.len() < 2 {
            0.0
        } else {
            (candidates.iter().map(|c| (c.1 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        let thr = mean + std;
        for &(idx, iou) in &candidates {
            let (level, local) = locate(set, idx);
            let p = level.center(local);
            let inside = p[0] > gt.bbox[0] && p[0] < gt.bbox[2] && p[1] > gt.bbox[1] && p[1] < gt.bbox[3];
            if iou > 0.0 && iou >= thr - THRESHOLD_SLACK && inside && iou > best[idx].0 {
                best[idx] = (iou, Some(g));
            }
        }
    }
    Ok(best.into_iter().map(|b| b.1).collect())
}

fn locate(set: &Anchor2DSet, idx: usize) -> (&Level2D, usize) {
    let level = set
        .levels
        .iter()
        .rev()
        .find(|l| l.offset <= idx)
        .expect("index belongs to a level");
    (level, idx - level.offset)
}
