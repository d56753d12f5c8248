use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::boxes::{bev_iou_rotated, direction_bin, encode_residuals, Box3D};
use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchThresholds {
    pub pos: f64,
    pub neg: f64,
}

impl MatchThresholds {
    pub fn new(pos: f64, neg: f64) -> Result<Self> {
        ensure!(
            (0.0..=1.0).contains(&neg) && (neg..=1.0).contains(&pos),
            InvalidArgument,
            "need 0 <= neg ({neg}) <= pos ({pos}) <= 1"
        );
        Ok(MatchThresholds { pos, neg })
    }
}

/// Matching thresholds by class id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassThresholds(pub BTreeMap<u32, MatchThresholds>);

impl Default for ClassThresholds {
    fn default() -> Self {
        let mut m = BTreeMap::new();
        m.insert(0, MatchThresholds { pos: 0.6, neg: 0.45 });
        m.insert(1, MatchThresholds { pos: 0.5, neg: 0.35 });
        m.insert(2, MatchThresholds { pos: 0.5, neg: 0.35 });
        ClassThresholds(m)
    }
}

impl ClassThresholds {
    pub fn get(&self, class_id: u32) -> Result<MatchThresholds> {
        self.0.get(&class_id).copied().ok_or_else(|| {
            crate::Error::InvalidArgument(format!("no matching thresholds for class {class_id}"))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Positive(usize),
    Negative,
    Ignore,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositiveTarget {
    pub anchor: usize,
    pub gt: usize,
    pub residuals: [f64; 7],
    pub dir_bin: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub labels: Vec<Label>,
    /// Positives in anchor order.
    pub positives: Vec<PositiveTarget>,
}

impl Assignment {
    pub fn num_pos(&self) -> usize {
        self.positives.len()
    }

    /// Classification labels and weights (ignored anchors get weight 0).
    pub fn cls_targets(&self) -> (Vec<f64>, Vec<f64>) {
        self.labels
            .iter()
            .map(|l| match l {
                Label::Positive(_) => (1.0, 1.0),
                Label::Negative => (0.0, 1.0),
                Label::Ignore => (0.0, 0.0),
            })
            .unzip()
    }
}

fn bev_aabb(b: &Box3D) -> [f64; 4] {
    let c = b.bev().corners();
    let mut r = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for p in c {
        r[0] = r[0].min(p[0]);
        r[1] = r[1].min(p[1]);
        r[2] = r[2].max(p[0]);
        r[3] = r[3].max(p[1]);
    }
    r
}

/// SECOND-style matching by BEV IoU within each class. An anchor is positive
/// at IoU >= pos, negative below neg and ignored in between. Each gt also
/// claims its best anchor (lowest index on ties) when that IoU reaches neg.
/// A positive anchor regresses to its highest-IoU gt (lowest index on ties).
pub fn assign_3d_targets(
    anchors: &[Box3D],
    gts: &[Box3D],
    thresholds: &ClassThresholds,
) -> Result<Assignment> {
    let gt_boxes: Vec<[f64; 4]> = gts.iter().map(bev_aabb).collect();
    // best (iou, gt) per anchor and best (iou, anchor) per gt
    let mut anchor_best: Vec<(f64, Option<usize>)> = vec![(0.0, None); anchors.len()];
    let mut gt_best: Vec<(f64, Option<usize>)> = vec![(0.0, None); gts.len()];
    for (a, anchor) in anchors.iter().enumerate() {
        let ab = bev_aabb(anchor);
        for (g, gt) in gts.iter().enumerate() {
            if gt.class_id != anchor.class_id {
                continue;
            }
            let gb = gt_boxes[g];
            if ab[0] >= gb[2] || gb[0] >= ab[2] || ab[1] >= gb[3] || gb[1] >= ab[3] {
                continue;
            }
            let iou = bev_iou_rotated(&anchor.bev(), &gt.bev())?;
            if iou <= 0.0 {
                continue;
            }
            if iou > anchor_best[a].0 {
                anchor_best[a] = (iou, Some(g));
            }
            if iou > gt_best[g].0 {
                gt_best[g] = (iou, Some(a));
            }
        }
    }
    let mut labels = Vec::with_capacity(anchors.len());
    for (a, anchor) in anchors.iter().enumerate() {
        let th = thresholds.get(anchor.class_id)?;
        let (iou, g) = anchor_best[a];
        labels.push(match g {
            Some(g) if iou >= th.pos => Label::Positive(g),
            _ if iou < th.neg => Label::Negative,
            _ => Label::Ignore,
        });
    }
    for (g, gt) in gts.iter().enumerate() {
        let th = thresholds.get(gt.class_id)?;
        if let (iou, Some(a)) = gt_best[g] {
            if iou >= th.neg {
                let owner = anchor_best[a].1.expect("anchor overlaps this gt");
                labels[a] = Label::Positive(owner);
            }
        }
    }
    let mut positives = Vec::new();
    for (a, label) in labels.iter().enumerate() {
        if let Label::Positive(g) = *label {
            positives.push(PositiveTarget {
                anchor: a,
                gt: g,
                residuals: encode_residuals(&gts[g], &anchors[a])?,
                dir_bin: direction_bin(gts[g].theta),
            });
        }
    }
    Ok(Assignment { labels, positives })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn car(x: f64, z: f64, yaw: f64) -> Box3D {
        Box3D::new([x, 1.0, z], [3.9, 1.6, 1.56], yaw, 0).unwrap()
    }

    #[test]
    fn no_gts_all_negative() {
        let anchors = vec![car(0.0, 10.0, 0.0), car(1.0, 10.0, 0.0)];
        let a = assign_3d_targets(&anchors, &[], &ClassThresholds::default()).unwrap();
        assert!(a.labels.iter().all(|l| *l == Label::Negative));
        assert_eq!(a.num_pos(), 0);
    }

    #[test]
    fn identical_anchor_is_positive_with_zero_residuals() {
        let anchors = vec![car(0.0, 10.0, 0.0), car(8.0, 10.0, 0.0)];
        let a = assign_3d_targets(&anchors, &[car(0.0, 10.0, 0.0)], &ClassThresholds::default()).unwrap();
        assert_eq!(a.labels, vec![Label::Positive(0), Label::Negative]);
        assert_eq!(a.positives[0].residuals, [0.0; 7]);
    }

    #[test]
    fn other_classes_do_not_match() {
        let anchors = vec![car(0.0, 10.0, 0.0)];
        let mut gt = car(0.0, 10.0, 0.0);
        gt.class_id = 1;
        let a = assign_3d_targets(&anchors, &[gt], &ClassThresholds::default()).unwrap();
        assert_eq!(a.labels, vec![Label::Negative]);
    }

    #[test]
    fn best_anchor_is_forced_when_above_negative_threshold() {
        // IoU 0.5 sits between neg 0.45 and pos 0.6
        let shift = 3.9 / 3.0;
        let anchors = vec![car(-shift, 10.0, 0.0), car(20.0, 10.0, 0.0)];
        let a = assign_3d_targets(&anchors, &[car(0.0, 10.0, 0.0)], &ClassThresholds::default()).unwrap();
        assert_eq!(a.labels[0], Label::Positive(0));
    }
}
