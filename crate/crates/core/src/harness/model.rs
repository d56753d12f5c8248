//! The desk-scale student network and the per-scene targets it trains on.
//!
//! Stereo features go through the plane sweep and a 1x1 matching net to
//! depth logits; the matching net's hidden features and the depth-weighted
//! semantic features are resampled into the voxel grid, collapsed to BEV,
//! aggregated by two 1x1 layers around a dilated neighborhood gather and
//! decoded by an anchor head. A pooled 2D head on the semantic features
//! adds the auxiliary image loss.

use std::collections::BTreeMap;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::assignment::{
    assign_3d_targets, atss_assign_2d, generate_anchors, Anchor2DSet, AnchorClassSpec,
    AnchorGrid, Assignment, CenterMode, ClassThresholds, Gt2D, ATSS_STRIDES, ATSS_TOP_K,
};
use crate::boxes::Box3D;
use crate::error::{ensure, Error, Result};
use crate::losses::{
    dir_cls_loss, focal_cls_loss, imitation_loss, iou_loss_residuals, l1_box_loss,
    unimodal_depth_loss, Adapter, ImitationLayer, ImitationTerm, LossTerms, MaskPair,
};
use crate::scene::{bev_any, foreground_mask, nonempty_sites, teacher_bev, SceneData, SceneGeometry, SEMANTIC_CHANNELS, STEREO_CHANNELS, TEACHER_CHANNELS};
use crate::tensor::{LinearMap, LinearMapBuilder, Tape, Tensor, Var};
use crate::volumes::{
    bev_permutation, build_3d_volume_with, build_stereo_volume_with, collapse_tensor_to_bev,
    depth_distribution, DepthDistribution, StereoSampler, VoxelSampler,
};

pub const DEPTH_HIDDEN: usize = 8;
pub const AGG_HIDDEN: usize = 16;
pub const BEV_AGG_CHANNELS: usize = 64;
/// Side of the square BEV neighborhood gathered between the two
/// aggregation layers, and its dilation in cells.
pub const AGG_TAPS: usize = 5;
pub const AGG_DILATION: usize = 3;
/// Side of the 2D anchors in strides.
const ANCHOR_2D_SCALE: f64 = 8.0;
/// Side of the square window the matching cost is averaged over.
pub const COST_WINDOW: usize = 5;
/// Fixed input normalization of the stereo features, which are O(5).
const STEREO_INPUT_SCALE: f64 = 0.2;
/// Initial scale of the matching net's output, in normalized units.
const MATCH_GAIN: f64 = 30.0;
/// Initial diagonal of the semantic net. Depth probabilities rarely exceed
/// 0.2 per voxel, so unit gain would leave the masked semantic channels two
/// orders of magnitude below the stereo channels.
const SEM_GAIN: f64 = 8.0;
/// Gain on the BEV features before the aggregation layers.
const BEV_INPUT_SCALE: f64 = 3.0;
/// Focal-loss prior: initial foreground probability 0.01.
const PRIOR_LOGIT: f64 = -4.59511985013459;

pub type Params = BTreeMap<String, Tensor>;

/// Geometry-level maps and anchors shared by every scene.
pub struct Context {
    pub geometry: SceneGeometry,
    stereo: StereoSampler,
    voxels: VoxelSampler,
    pub anchors: AnchorGrid,
    pub anchors_2d: Anchor2DSet,
    bev_perm: Rc<LinearMap>,
    dilate: Rc<LinearMap>,
    head_reg: Rc<LinearMap>,
    head_dir: Rc<LinearMap>,
    pool_2d: Rc<LinearMap>,
    cost_u: Rc<LinearMap>,
    cost_v: Rc<LinearMap>,
    stereo_diff: Tensor,
}

impl Context {
    pub fn new(geometry: &SceneGeometry) -> Result<Self> {
        let g = geometry;
        let [h, w] = g.image;
        let stereo = StereoSampler::new(g.rig, g.binning, h, w)?;
        let voxels = VoxelSampler::new(g.grid, &g.rig, &g.binning, h, w)?;
        let anchors = generate_anchors(&g.grid, &AnchorClassSpec::kitti_defaults(g.ground_y))?;
        let strides: Vec<f64> = ATSS_STRIDES.iter().map(|s| s / g.rig.stride()).collect();
        let anchors_2d = Anchor2DSet::new(h, w, &strides, ANCHOR_2D_SCALE)?;
        let [nx, ny, nz] = g.grid.counts();
        let c3 = v3d_channels();
        let bev_perm = Rc::new(bev_permutation([c3, nz, ny, nx]));
        let dilate = Rc::new(dilation_map(AGG_HIDDEN, nz, nx));
        let types = anchors.num_types();
        let cells = anchors.cells();
        let head_map = |count: usize| {
            let n = types * cells * count;
            let mut b = LinearMapBuilder::with_capacity(n, n, n);
            for t in 0..types {
                for cell in 0..cells {
                    for k in 0..count {
                        b.copy_row((t * count + k) * cells + cell);
                    }
                }
            }
            Rc::new(b.build())
        };
        let pool_2d = Rc::new(pool_map(&anchors_2d, SEMANTIC_CHANNELS, h, w));
        let cost_dims = [g.binning.count(), h, w];
        Ok(Context {
            geometry: *geometry,
            stereo,
            voxels,
            head_reg: head_map(7),
            head_dir: head_map(2),
            anchors,
            anchors_2d,
            bev_perm,
            dilate,
            pool_2d,
            cost_u: Rc::new(window_mean_map(cost_dims, COST_WINDOW, true)),
            cost_v: Rc::new(window_mean_map(cost_dims, COST_WINDOW, false)),
            stereo_diff: stereo_difference(STEREO_CHANNELS),
        })
    }

    pub fn bev_channels(&self) -> usize {
        v3d_channels() * self.geometry.grid.counts()[1]
    }
}

fn v3d_channels() -> usize {
    DEPTH_HIDDEN + SEMANTIC_CHANNELS
}

/// `[C, nz, nx] -> [C * taps^2, nz, nx]`: channel `c * taps^2 + t` holds
/// the mean of channel `c` over the dilation-sized block at tap `t` of the
/// dilated square, so the taps tile the neighborhood without gaps. Cells
/// outside the map count as zero.
fn dilation_map(channels: usize, nz: usize, nx: usize) -> LinearMap {
    let taps = AGG_TAPS * AGG_TAPS;
    let half = (AGG_TAPS / 2) as i64;
    let d = AGG_DILATION as i64;
    let r = d / 2;
    let w = 1.0 / (d * d) as f64;
    let cells = nz * nx;
    let block = (d * d) as usize;
    let mut b = LinearMapBuilder::with_capacity(channels * cells, channels * taps * cells, channels * taps * cells * block);
    for c in 0..channels {
        for t in 0..taps {
            let dz = (t / AGG_TAPS) as i64 - half;
            let dx = (t % AGG_TAPS) as i64 - half;
            for k in 0..nz as i64 {
                for i in 0..nx as i64 {
                    for bz in -r..=r {
                        for bx in -r..=r {
                            let (kk, ii) = (k + d * dz + bz, i + d * dx + bx);
                            if kk >= 0 && kk < nz as i64 && ii >= 0 && ii < nx as i64 {
                                b.tap(c * cells + (kk as usize) * nx + ii as usize, w);
                            }
                        }
                    }
                    b.end_row();
                }
            }
        }
    }
    b.build()
}

/// Fixed `[C, 2C]` mix taking left minus right features of a sweep volume.
fn stereo_difference(c: usize) -> Tensor {
    let mut w = vec![0.0; c * 2 * c];
    for ch in 0..c {
        w[ch * 2 * c + ch] = 1.0;
        w[ch * 2 * c + c + ch] = -1.0;
    }
    Tensor::new(vec![c, 2 * c], w).expect("shape")
}

/// Mean over a centered window of `window` taps along one axis of a
/// `[D, H, W]` volume (`along_u` picks W, otherwise H), in-bounds taps only.
fn window_mean_map(dims: [usize; 3], window: usize, along_u: bool) -> LinearMap {
    let [d, h, w] = dims;
    let n = d * h * w;
    let half = (window / 2) as i64;
    let mut b = LinearMapBuilder::with_capacity(n, n, n * window);
    for slice in 0..d {
        for v in 0..h as i64 {
            for u in 0..w as i64 {
                let (pos, len) = if along_u { (u, w as i64) } else { (v, h as i64) };
                let lo = (pos - half).max(0);
                let hi = (pos + half).min(len - 1);
                let wt = 1.0 / (hi - lo + 1) as f64;
                for q in lo..=hi {
                    let (vv, uu) = if along_u { (v, q) } else { (q, u) };
                    b.tap((slice * h + vv as usize) * w + uu as usize, wt);
                }
                b.end_row();
            }
        }
    }
    b.build()
}

/// Average pooling of `[C, H, W]` into every 2D anchor cell: `[C, N_2d]`.
fn pool_map(set: &Anchor2DSet, channels: usize, h: usize, w: usize) -> LinearMap {
    let n = set.len();
    let plane = h * w;
    let mut b = LinearMapBuilder::with_capacity(channels * plane, channels * n, channels * n * 4);
    let span = |i: usize, s: f64, limit: usize| {
        let lo = ((i as f64 * s).floor() as usize).min(limit - 1);
        let hi = (((i + 1) as f64 * s).floor() as usize).clamp(lo + 1, limit);
        (lo, hi)
    };
    for c in 0..channels {
        for level in &set.levels {
            for r in 0..level.rows {
                let (v0, v1) = span(r, level.stride, h);
                for col in 0..level.cols {
                    let (u0, u1) = span(col, level.stride, w);
                    let wt = 1.0 / ((v1 - v0) * (u1 - u0)) as f64;
                    for v in v0..v1 {
                        for u in u0..u1 {
                            b.tap(c * plane + v * w + u, wt);
                        }
                    }
                    b.end_row();
                }
            }
        }
    }
    b.build()
}

fn normal_tensor(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("positive std");
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape")
}

fn he(rng: &mut ChaCha8Rng, cout: usize, cin: usize) -> Tensor {
    normal_tensor(rng, &[cout, cin], (2.0 / cin as f64).sqrt())
}

pub fn adapter_shape(layer: ImitationLayer, ctx: &Context) -> (usize, usize) {
    let ny = ctx.geometry.grid.counts()[1];
    match layer {
        ImitationLayer::V3d => (TEACHER_CHANNELS, v3d_channels()),
        ImitationLayer::Bev => (TEACHER_CHANNELS * ny, ctx.bev_channels()),
        ImitationLayer::BevAgg => (crate::scene::TEACHER_BEV_CHANNELS, BEV_AGG_CHANNELS),
    }
}

/// Seeded initial parameters. The matching net starts as a signed
/// difference detector between each left channel and its right partner, so
/// the initial depth logits favor photometric agreement; 1x1 layers with
/// equal widths start near identity and the rest are He-initialized.
pub fn init_params(ctx: &Context, seed: u64) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Params::new();
    let c = STEREO_CHANNELS;
    let mut w1 = vec![0.0; DEPTH_HIDDEN * c];
    for ch in 0..c.min(DEPTH_HIDDEN / 2) {
        w1[2 * ch * c + ch] = 1.0;
        w1[(2 * ch + 1) * c + ch] = -1.0;
    }
    p.insert("depth.w1".into(), Tensor::new(vec![DEPTH_HIDDEN, c], w1).expect("shape"));
    let w2 = normal_tensor(&mut rng, &[1, DEPTH_HIDDEN], 0.01).map(|v| v - MATCH_GAIN);
    p.insert("depth.w2".into(), w2);
    p.insert("depth.b2".into(), Tensor::zeros(&[1]).expect("shape"));

    let s = SEMANTIC_CHANNELS;
    let mut ws = normal_tensor(&mut rng, &[s, s], 0.01).into_data();
    for i in 0..s {
        ws[i * s + i] += SEM_GAIN;
    }
    p.insert("sem.w".into(), Tensor::new(vec![s, s], ws).expect("shape"));
    p.insert("sem.b".into(), Tensor::zeros(&[s]).expect("shape"));

    let cb = ctx.bev_channels();
    p.insert("agg.w1".into(), he(&mut rng, AGG_HIDDEN, cb));
    p.insert("agg.b1".into(), Tensor::zeros(&[AGG_HIDDEN]).expect("shape"));
    let gathered = AGG_HIDDEN * AGG_TAPS * AGG_TAPS;
    p.insert("agg.w2".into(), he(&mut rng, BEV_AGG_CHANNELS, gathered));
    p.insert("agg.b2".into(), Tensor::zeros(&[BEV_AGG_CHANNELS]).expect("shape"));

    let types = ctx.anchors.num_types();
    for (name, count, bias) in [("cls", 1, PRIOR_LOGIT), ("reg", 7, 0.0), ("dir", 2, 0.0)] {
        let ch = types * count;
        p.insert(format!("head.{name}.w"), normal_tensor(&mut rng, &[ch, BEV_AGG_CHANNELS], 0.01));
        p.insert(format!("head.{name}.b"), Tensor::full(&[ch], bias).expect("shape"));
    }
    p.insert("head2d.w".into(), normal_tensor(&mut rng, &[1, s], 0.01));
    p.insert("head2d.b".into(), Tensor::new(vec![1], vec![PRIOR_LOGIT]).expect("shape"));

    for layer in [ImitationLayer::V3d, ImitationLayer::Bev, ImitationLayer::BevAgg] {
        let (cout, cin) = adapter_shape(layer, ctx);
        let w = normal_tensor(&mut rng, &[cout, cin], (1.0 / cin as f64).sqrt());
        p.insert(format!("adapt.{layer}.w"), w);
        p.insert(format!("adapt.{layer}.b"), Tensor::zeros(&[cout]).expect("shape"));
    }
    p
}

/// Parameters recorded on a tape.
pub struct TapeParams(BTreeMap<String, Var>);

impl TapeParams {
    pub fn record(tape: &mut Tape, params: &Params, trainable: bool) -> Self {
        TapeParams(
            params
                .iter()
                .map(|(k, v)| {
                    let var = if trainable {
                        tape.param(v.clone())
                    } else {
                        tape.constant(v.clone())
                    };
                    (k.clone(), var)
                })
                .collect(),
        )
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.0.iter()
    }
}

/// Scene payloads plus everything derived from them once.
pub struct PreparedScene {
    pub data: SceneData,
    pub masks: BTreeMap<ImitationLayer, MaskPair>,
    pub teachers: BTreeMap<ImitationLayer, Tensor>,
    pub assignment: Assignment,
    cls_labels: Vec<f64>,
    cls_weights: Vec<f64>,
    l1_targets: Vec<(usize, [f64; 7])>,
    iou_targets: Vec<(usize, Box3D, Box3D)>,
    dir_targets: Vec<(usize, usize)>,
    labels_2d: Vec<f64>,
    num_pos_2d: usize,
}

/// 2D ground truth: objects with a visible silhouette, ranked by their
/// reprojected 3D centers.
pub fn gt_2d(data: &SceneData) -> Result<Vec<Gt2D>> {
    let rig = &data.scene.geometry.rig;
    let mut out = Vec::new();
    for (b, bbox) in data.scene.boxes.iter().zip(&data.boxes_2d) {
        if let Some(bbox) = bbox {
            out.push(Gt2D {
                bbox: *bbox,
                center3d: rig.reproject_box_center(b)?,
            });
        }
    }
    Ok(out)
}

impl PreparedScene {
    pub fn new(data: SceneData, ctx: &Context, thresholds: &ClassThresholds) -> Result<Self> {
        ensure!(
            data.scene.geometry == ctx.geometry,
            Config,
            "scene {} was generated with a different geometry",
            data.scene.id
        );
        let grid = ctx.geometry.grid;
        let (fg, fg_bev) = foreground_mask(&data.scene, &grid)?;
        let sp_bev = bev_any(&data.occupancy)?;
        let mut masks = BTreeMap::new();
        masks.insert(ImitationLayer::V3d, MaskPair::new(fg, data.occupancy.clone())?);
        masks.insert(ImitationLayer::Bev, MaskPair::new(fg_bev.clone(), sp_bev.clone())?);
        let agg_teacher = teacher_bev(&data.teacher)?;
        masks.insert(ImitationLayer::BevAgg, MaskPair::new(fg_bev, nonempty_sites(&agg_teacher)?)?);
        let mut teachers = BTreeMap::new();
        teachers.insert(ImitationLayer::V3d, data.teacher.clone());
        teachers.insert(ImitationLayer::Bev, collapse_tensor_to_bev(&data.teacher)?);
        teachers.insert(ImitationLayer::BevAgg, agg_teacher);

        let anchors = &ctx.anchors.anchors;
        let assignment = assign_3d_targets(anchors, &data.scene.boxes, thresholds)?;
        let (cls_labels, cls_weights) = assignment.cls_targets();
        let mut l1_targets = Vec::new();
        let mut iou_targets = Vec::new();
        let mut dir_targets = Vec::new();
        for p in &assignment.positives {
            l1_targets.push((p.anchor, p.residuals));
            iou_targets.push((p.anchor, anchors[p.anchor], data.scene.boxes[p.gt]));
            dir_targets.push((p.anchor, p.dir_bin));
        }
        let gts = gt_2d(&data)?;
        let assigned = atss_assign_2d(&ctx.anchors_2d, &gts, ATSS_TOP_K, CenterMode::Reprojected3d)?;
        let labels_2d: Vec<f64> = assigned.iter().map(|a| if a.is_some() { 1.0 } else { 0.0 }).collect();
        let num_pos_2d = assigned.iter().filter(|a| a.is_some()).count();
        Ok(PreparedScene {
            data,
            masks,
            teachers,
            assignment,
            cls_labels,
            cls_weights,
            l1_targets,
            iou_targets,
            dir_targets,
            labels_2d,
            num_pos_2d,
        })
    }
}

/// Intermediate maps and head outputs of one forward pass.
pub struct Features {
    pub prob: DepthDistribution,
    pub v3d: Var,
    pub bev: Var,
    pub bev_agg: Var,
    pub sem: Var,
    /// `[A]` class logits, `[A, 7]` residuals, `[A, 2]` direction logits.
    pub cls: Var,
    pub reg: Var,
    pub dir: Var,
    pub logits_2d: Var,
}

impl Features {
    pub fn layer(&self, layer: ImitationLayer) -> Var {
        match layer {
            ImitationLayer::V3d => self.v3d,
            ImitationLayer::Bev => self.bev,
            ImitationLayer::BevAgg => self.bev_agg,
        }
    }
}

pub fn features(tape: &mut Tape, ctx: &Context, p: &TapeParams, data: &SceneData) -> Result<Features> {
    let fl = tape.constant(data.feat_left.map(|v| v * STEREO_INPUT_SCALE));
    let fr = tape.constant(data.feat_right.map(|v| v * STEREO_INPUT_SCALE));
    let vst = build_stereo_volume_with(tape, fl, fr, &ctx.stereo)?;
    let c = ctx.stereo_diff.shape()[0];
    let dw = tape.constant(ctx.stereo_diff.clone());
    let zc = tape.constant(Tensor::zeros(&[c])?);
    let diff = tape.channel_mix(vst.var, dw, zc, false)?;
    let zh = tape.constant(Tensor::zeros(&[DEPTH_HIDDEN])?);
    let hidden = tape.channel_mix(diff, p.get("depth.w1")?, zh, true)?;
    let logits = tape.channel_mix(hidden, p.get("depth.w2")?, p.get("depth.b2")?, false)?;
    let [h, w] = ctx.geometry.image;
    let d = ctx.geometry.binning.count();
    let logits = tape.gather_shared(logits, Rc::clone(&ctx.cost_u), &[d, h, w])?;
    let logits = tape.gather_shared(logits, Rc::clone(&ctx.cost_v), &[d, h, w])?;
    let prob = depth_distribution(tape, logits)?;

    let sem_raw = tape.constant(data.semantics.clone());
    let sem = tape.channel_mix(sem_raw, p.get("sem.w")?, p.get("sem.b")?, true)?;
    let v3d = build_3d_volume_with(tape, hidden, sem, &prob, &ctx.voxels)?.var;

    let [nx, _, nz] = ctx.geometry.grid.counts();
    let bev = tape.gather_shared(v3d, Rc::clone(&ctx.bev_perm), &[ctx.bev_channels(), nz, nx])?;
    let bev_in = tape.scale(bev, BEV_INPUT_SCALE);
    let a1 = tape.channel_mix(bev_in, p.get("agg.w1")?, p.get("agg.b1")?, true)?;
    let taps = AGG_TAPS * AGG_TAPS;
    let gathered = tape.gather_shared(a1, Rc::clone(&ctx.dilate), &[AGG_HIDDEN * taps, nz, nx])?;
    let bev_agg = tape.channel_mix(gathered, p.get("agg.w2")?, p.get("agg.b2")?, true)?;
    let a = ctx.anchors.len();
    let cls = tape.channel_mix(bev_agg, p.get("head.cls.w")?, p.get("head.cls.b")?, false)?;
    let cls = tape.reshape(cls, &[a])?;
    let reg = tape.channel_mix(bev_agg, p.get("head.reg.w")?, p.get("head.reg.b")?, false)?;
    let reg = tape.gather_shared(reg, Rc::clone(&ctx.head_reg), &[a, 7])?;
    let dir = tape.channel_mix(bev_agg, p.get("head.dir.w")?, p.get("head.dir.b")?, false)?;
    let dir = tape.gather_shared(dir, Rc::clone(&ctx.head_dir), &[a, 2])?;

    let pooled = tape.gather_shared(sem, Rc::clone(&ctx.pool_2d), &[SEMANTIC_CHANNELS, ctx.anchors_2d.len()])?;
    let l2d = tape.channel_mix(pooled, p.get("head2d.w")?, p.get("head2d.b")?, false)?;
    let logits_2d = tape.reshape(l2d, &[ctx.anchors_2d.len()])?;
    Ok(Features {
        prob,
        v3d,
        bev,
        bev_agg,
        sem,
        cls,
        reg,
        dir,
        logits_2d,
    })
}

/// Every loss component, plus the per-layer imitation values. The
/// imitation term covers the configured layers.
pub fn losses(
    tape: &mut Tape,
    p: &TapeParams,
    scene: &PreparedScene,
    f: &Features,
    layers: &BTreeMap<ImitationLayer, bool>,
) -> Result<(LossTerms<Var>, BTreeMap<ImitationLayer, f64>)> {
    let data = &scene.data;
    let depth = unimodal_depth_loss(tape, f.prob.var, &data.depth, &data.valid, &data.scene.geometry.binning)?;
    let num_pos = scene.assignment.num_pos();
    let cls = focal_cls_loss(tape, f.cls, &scene.cls_labels, &scene.cls_weights, num_pos)?;
    let reg_l1 = l1_box_loss(tape, f.reg, &scene.l1_targets)?;
    let reg_iou = iou_loss_residuals(tape, f.reg, &scene.iou_targets)?;
    let dir = dir_cls_loss(tape, f.dir, &scene.dir_targets)?;
    let weights_2d = vec![1.0; scene.labels_2d.len()];
    let two_d = focal_cls_loss(tape, f.logits_2d, &scene.labels_2d, &weights_2d, scene.num_pos_2d)?;
    let mut terms = Vec::new();
    for (&layer, &relu_after) in layers {
        terms.push(ImitationTerm {
            layer,
            student: f.layer(layer),
            adapter: Adapter {
                weight: p.get(&format!("adapt.{layer}.w"))?,
                bias: p.get(&format!("adapt.{layer}.b"))?,
                relu_after,
            },
            teacher: &scene.teachers[&layer],
            masks: &scene.masks[&layer],
        });
    }
    let (im, per_layer) = imitation_loss(tape, &terms)?;
    Ok((
        LossTerms {
            depth,
            cls,
            reg_l1,
            reg_iou,
            dir,
            im,
            two_d,
        },
        per_layer,
    ))
}

/// Serialized parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub params: BTreeMap<String, TensorRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Checkpoint {
    pub fn from_params(step: usize, params: &Params) -> Self {
        Checkpoint {
            step,
            params: params
                .iter()
                .map(|(k, t)| {
                    (
                        k.clone(),
                        TensorRecord {
                            shape: t.shape().to_vec(),
                            data: t.data().to_vec(),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn to_params(&self) -> Result<Params> {
        self.params
            .iter()
            .map(|(k, r)| Ok((k.clone(), Tensor::new(r.shape.clone(), r.data.clone())?)))
            .collect()
    }
}

/// Overflow-free logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
