//! Average precision over 40 recall positions, per class, IoU threshold and
//! overlap mode.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::boxes::{bev_iou_rotated, iou3d, Box3D, Detection, ObjectClass};
use crate::error::{ensure, Result};

pub const RECALL_POSITIONS: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IouMode {
    #[serde(rename = "3D")]
    ThreeD,
    #[serde(rename = "BEV")]
    Bev,
}

impl IouMode {
    pub fn name(self) -> &'static str {
        match self {
            IouMode::ThreeD => "3D",
            IouMode::Bev => "BEV",
        }
    }

    pub fn iou(self, a: &Box3D, b: &Box3D) -> Result<f64> {
        match self {
            IouMode::ThreeD => iou3d(a, b),
            IouMode::Bev => bev_iou_rotated(&a.bev(), &b.bev()),
        }
    }
}

/// Descending score, input order on ties.
fn score_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    order
}

/// True-positive flags in input order. Detections are visited by descending
/// score; each takes the unmatched gt of highest IoU (lowest index on ties)
/// if that IoU reaches `threshold`.
pub fn match_detections(
    dets: &[Detection],
    gts: &[Box3D],
    threshold: f64,
    mode: IouMode,
) -> Result<Vec<bool>> {
    let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
    let mut taken = vec![false; gts.len()];
    let mut flags = vec![false; dets.len()];
    for i in score_order(&scores) {
        let mut best: Option<(f64, usize)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let iou = mode.iou(&dets[i].bbox, gt)?;
            if iou >= threshold && best.is_none_or(|(b, _)| iou > b) {
                best = Some((iou, g));
            }
        }
        if let Some((_, g)) = best {
            taken[g] = true;
            flags[i] = true;
        }
    }
    Ok(flags)
}

/// Mean over recall levels `k / 40` of the best precision at recall >= level.
/// With no ground truth the result is 1 when there are no detections and 0
/// otherwise. Recall and precision are kept as integer ratios and the mean is
/// rounded once, so hand-computed fractions come out exact.
pub fn ap40(flags: &[bool], scores: &[f64], num_gt: usize) -> Result<f64> {
    ensure!(
        flags.len() == scores.len(),
        Shape,
        "{} flags for {} scores",
        flags.len(),
        scores.len()
    );
    if num_gt == 0 {
        return Ok(if flags.is_empty() { 1.0 } else { 0.0 });
    }
    // (recall numerator, tp, rank) per ranked detection
    let mut points = Vec::with_capacity(flags.len());
    let mut tp = 0u64;
    for (rank, &i) in score_order(scores).iter().enumerate() {
        if flags[i] {
            tp += 1;
        }
        points.push((tp, rank as u64 + 1));
    }
    // right-to-left precision envelope, kept as fractions
    let mut envelope = vec![(0u64, 1u64); points.len()];
    let mut running = (0u64, 1u64);
    for i in (0..points.len()).rev() {
        let (t, r) = points[i];
        if u128::from(t) * u128::from(running.1) > u128::from(running.0) * u128::from(r) {
            running = (t, r);
        }
        envelope[i] = running;
    }
    let mut hits = vec![0u64; points.len()];
    let mut j = 0;
    let n = num_gt as u64;
    let levels = RECALL_POSITIONS as u64;
    for k in 1..=levels {
        // recall tp / n >= k / 40
        while j < points.len() && points[j].0 * levels < k * n {
            j += 1;
        }
        if j < points.len() {
            hits[j] += 1;
        }
    }
    Ok(exact_mean(&hits, &envelope, levels))
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `sum_j hits_j * p_j / levels` with fractional `p_j`, rounded once.
fn exact_mean(hits: &[u64], fractions: &[(u64, u64)], levels: u64) -> f64 {
    let (mut num, mut den) = (0u128, 1u128);
    for (&h, &(t, r)) in hits.iter().zip(fractions) {
        if h == 0 {
            continue;
        }
        let (a, b) = (u128::from(h) * u128::from(t), u128::from(r));
        let g = gcd(den, b);
        let next = den
            .checked_mul(b / g)
            .and_then(|d| num.checked_mul(b / g).zip(a.checked_mul(den / g)).map(|(x, y)| (x + y, d)));
        match next {
            Some((nn, dd)) => {
                let g = gcd(nn, dd).max(1);
                (num, den) = (nn / g, dd / g);
            }
            None => {
                let approx: f64 = hits
                    .iter()
                    .zip(fractions)
                    .map(|(&h, &(t, r))| h as f64 * t as f64 / r as f64)
                    .sum();
                return approx / levels as f64;
            }
        }
    }
    let den = den * u128::from(levels);
    let g = gcd(num, den).max(1);
    (num / g) as f64 / (den / g) as f64
}

/// Detections and ground truth for one scene.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneResult {
    pub scene_id: String,
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<Box3D>,
}

/// AP of one class at one threshold, pooling matches over scenes.
pub fn class_ap(scenes: &[SceneResult], class_id: u32, threshold: f64, mode: IouMode) -> Result<f64> {
    let mut flags = Vec::new();
    let mut scores = Vec::new();
    let mut num_gt = 0;
    for s in scenes {
        let dets: Vec<Detection> = s
            .detections
            .iter()
            .filter(|d| d.bbox.class_id == class_id)
            .copied()
            .collect();
        let gts: Vec<Box3D> = s
            .ground_truth
            .iter()
            .filter(|g| g.class_id == class_id)
            .copied()
            .collect();
        num_gt += gts.len();
        flags.extend(match_detections(&dets, &gts, threshold, mode)?);
        scores.extend(dets.iter().map(|d| d.score));
    }
    ap40(&flags, &scores, num_gt)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// `(class, thresholds)` pairs.
    pub thresholds: Vec<(ObjectClass, Vec<f64>)>,
    pub modes: Vec<IouMode>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            thresholds: vec![
                (ObjectClass::Car, vec![0.7, 0.5]),
                (ObjectClass::Pedestrian, vec![0.5, 0.25]),
                (ObjectClass::Cyclist, vec![0.5, 0.25]),
            ],
            modes: vec![IouMode::ThreeD, IouMode::Bev],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        for (class, ths) in &self.thresholds {
            ensure!(
                ths.iter().all(|t| *t > 0.0 && *t <= 1.0),
                Config,
                "IoU thresholds for {} must lie in (0, 1]",
                class.name()
            );
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApRow {
    pub class: ObjectClass,
    pub mode: IouMode,
    pub iou_thr: f64,
    pub ap: f64,
}

/// Every (class, mode, threshold) row; empty when there are no scenes.
pub fn evaluate(scenes: &[SceneResult], cfg: &EvalConfig) -> Result<Vec<ApRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    if scenes.is_empty() {
        return Ok(rows);
    }
    for (class, ths) in &cfg.thresholds {
        for &mode in &cfg.modes {
            for &t in ths {
                rows.push(ApRow {
                    class: *class,
                    mode,
                    iou_thr: t,
                    ap: class_ap(scenes, class.id(), t, mode)?,
                });
            }
        }
    }
    Ok(rows)
}

pub fn ap_table_csv(rows: &[ApRow]) -> String {
    let mut s = String::from("class,mode,iou_thr,AP\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{:.6}", r.class.name(), r.mode.name(), r.iou_thr, r.ap);
    }
    s
}
