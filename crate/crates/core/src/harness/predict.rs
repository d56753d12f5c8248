//! Decoding head outputs into detections, and validation metrics.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use super::config::DecodeConfig;
use super::model::{features, losses, sigmoid, Context, Params, PreparedScene, TapeParams};
use crate::boxes::{bev_iou_rotated, decode_residuals, direction_bin, normalize_angle, Detection};
use crate::error::{ensure, Result};
use crate::eval::SceneResult;
use crate::losses::ImitationLayer;
use crate::scene::SceneData;
use crate::tensor::{Tape, Tensor};

/// Greedy BEV non-maximum suppression within each class. Input order breaks
/// score ties.
pub fn nms_bev(dets: &[Detection], iou: f64) -> Result<Vec<Detection>> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap_or(Ordering::Equal));
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        let d = dets[i];
        let mut suppressed = false;
        for k in &kept {
            if k.bbox.class_id == d.bbox.class_id && bev_iou_rotated(&k.bbox.bev(), &d.bbox.bev())? > iou {
                suppressed = true;
                break;
            }
        }
        if !suppressed {
            kept.push(d);
        }
    }
    Ok(kept)
}

/// Thresholded, top-k, NMS-filtered detections for one scene.
pub fn decode_detections(
    ctx: &Context,
    cls: &Tensor,
    reg: &Tensor,
    dir: &Tensor,
    cfg: &DecodeConfig,
) -> Result<Vec<Detection>> {
    let a = ctx.anchors.len();
    ensure!(
        cls.numel() == a && reg.numel() == 7 * a && dir.numel() == 2 * a,
        Shape,
        "head outputs do not match {a} anchors"
    );
    let mut cand: Vec<(f64, usize)> = cls
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| (sigmoid(x), i))
        .filter(|(s, _)| *s > cfg.score_threshold)
        .collect();
    cand.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap_or(Ordering::Equal).then(x.1.cmp(&y.1)));
    cand.truncate(cfg.pre_nms_top_k);
    let mut dets = Vec::with_capacity(cand.len());
    for (score, i) in cand {
        let r: [f64; 7] = std::array::from_fn(|k| reg.data()[7 * i + k]);
        let mut b = decode_residuals(&r, &ctx.anchors.anchors[i])?;
        let d = &dir.data()[2 * i..2 * i + 2];
        let bin = usize::from(d[1] > d[0]);
        if direction_bin(b.theta) != bin {
            b.theta = normalize_angle(b.theta + std::f64::consts::PI);
        }
        dets.push(Detection { bbox: b, score });
    }
    nms_bev(&dets, cfg.nms_iou)
}

/// Forward pass without gradients, decoded to detections.
pub fn predict(ctx: &Context, params: &Params, data: &SceneData, cfg: &DecodeConfig) -> Result<Vec<Detection>> {
    let mut tape = Tape::new();
    let p = TapeParams::record(&mut tape, params, false);
    let f = features(&mut tape, ctx, &p, data)?;
    decode_detections(
        ctx,
        tape.value(f.cls),
        tape.value(f.reg),
        tape.value(f.dir),
        cfg,
    )
}

pub fn scene_results(
    ctx: &Context,
    params: &Params,
    scenes: &[PreparedScene],
    cfg: &DecodeConfig,
) -> Result<Vec<SceneResult>> {
    scenes
        .iter()
        .map(|s| {
            Ok(SceneResult {
                scene_id: s.data.scene.id.clone(),
                detections: predict(ctx, params, &s.data, cfg)?,
                ground_truth: s.data.scene.boxes.clone(),
            })
        })
        .collect()
}

/// Mean over scenes of each layer's masked imitation error, measured with
/// the checkpoint's own adapters.
pub fn imitation_mse(
    ctx: &Context,
    params: &Params,
    scenes: &[PreparedScene],
    layers: &BTreeMap<ImitationLayer, bool>,
) -> Result<BTreeMap<ImitationLayer, f64>> {
    let mut out: BTreeMap<ImitationLayer, f64> = BTreeMap::new();
    if scenes.is_empty() {
        return Ok(out);
    }
    for s in scenes {
        let mut tape = Tape::new();
        let p = TapeParams::record(&mut tape, params, false);
        let f = features(&mut tape, ctx, &p, &s.data)?;
        let (_, per_layer) = losses(&mut tape, &p, s, &f, layers)?;
        for (k, v) in per_layer {
            *out.entry(k).or_insert(0.0) += v / scenes.len() as f64;
        }
    }
    Ok(out)
}

/// Stereo-derived maps of one scene for inspection: depth distribution,
/// voxel volume and aggregated BEV feature.
pub fn dump_maps(ctx: &Context, params: &Params, data: &SceneData) -> Result<Vec<(&'static str, Tensor)>> {
    let mut tape = Tape::new();
    let p = TapeParams::record(&mut tape, params, false);
    let f = features(&mut tape, ctx, &p, data)?;
    Ok(vec![
        ("depth_prob.tsr", tape.value(f.prob.var).clone()),
        ("v3d.tsr", tape.value(f.v3d).clone()),
        ("bev_agg.tsr", tape.value(f.bev_agg).clone()),
    ])
}
