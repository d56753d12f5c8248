//! Finite-difference checks of every differentiable op and loss.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{Fault, GradcheckConfig};
use crate::boxes::{encode_residuals, Box3D};
use crate::error::Result;
use crate::geometry::{CameraRig, DepthBinning, VoxelGrid};
use crate::losses::{
    dir_cls_loss, focal_cls_loss, imitation_layer_loss, iou_loss_residuals, l1_box_loss,
    total_loss_tape, unimodal_depth_loss, Adapter, LossTerms, LossWeights, MaskPair,
};
use crate::tensor::{gradcheck_multi, LinearMapBuilder, ReduceOp, Tape, Tensor, Var};
use crate::volumes::{build_3d_volume, build_stereo_volume, collapse_to_bev, depth_distribution};

type Objective = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// One random instance: inputs and the scalar objective over them.
struct Case {
    inputs: Vec<Tensor>,
    f: Objective,
}

type Generator = fn(&mut ChaCha8Rng, &[Fault]) -> Case;

#[derive(Clone, Debug, PartialEq)]
pub struct OpReport {
    pub op: &'static str,
    pub points: usize,
    pub worst: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub ops: Vec<OpReport>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.ops.iter().all(|o| o.worst < self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.ops.iter().map(|o| o.worst).fold(0.0, f64::max)
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("op,points,worst_rel_error,pass\n");
        for o in &self.ops {
            let _ = writeln!(s, "{},{},{:e},{}", o.op, o.points, o.worst, o.worst < self.tolerance);
        }
        s
    }
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

fn binary(rng: &mut ChaCha8Rng, shape: &[usize], p: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| if rng.random::<f64>() < p { 1.0 } else { 0.0 }).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// `sum(out * r)` with fixed random `r`, turning any output into a scalar.
fn project(tape: &mut Tape, out: Var, r: &Tensor) -> Result<Var> {
    let r = tape.constant(r.clone());
    let m = tape.mul(out, r)?;
    Ok(tape.sum(m))
}

/// Builds a case whose objective projects `op(inputs)` onto random weights.
fn projected(
    rng: &mut ChaCha8Rng,
    inputs: Vec<Tensor>,
    out_shape: &[usize],
    op: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static,
) -> Case {
    let r = randn(rng, out_shape);
    Case {
        inputs,
        f: Box::new(move |tape, v| {
            let out = op(tape, v)?;
            project(tape, out, &r)
        }),
    }
}

fn relu_op(tape: &mut Tape, x: Var, faults: &[Fault]) -> Result<Var> {
    if faults.contains(&Fault::ReluBackward) {
        let value = tape.value(x).map(|v| v.max(0.0));
        return Ok(tape.custom(&[x], value, Box::new(|g, _| vec![g.to_vec()])));
    }
    tape.relu(x)
}

fn small_rig() -> (CameraRig, DepthBinning) {
    (
        CameraRig::new(10.0, 0.5, 2.5, 1.0, 1.0).expect("rig"),
        DepthBinning::new(2.0, 0.7, 4).expect("binning"),
    )
}

fn small_grid() -> VoxelGrid {
    VoxelGrid::new([-1.0, 1.0], [-0.5, 0.5], [2.0, 4.0], [0.5; 3]).expect("grid")
}

fn g_add(rng: &mut ChaCha8Rng, _: &[Fault]) -> Case {
    let inputs = vec![randn(rng, &[3, 4]), randn(rng, &[3, 4])];
    projected(rng, inputs, &[3, 4], |t, v| t.add(v[0], v[1]))
}

fn g_sub(rng: &mut ChaCha8Rng, _: &[Fault]) -> Case {
    let inputs = vec![randn(rng, &[3, 4]), randn(rng, &[3, 4])];
    projected(rng, inputs, &[3, 4], |t, v| t.sub(v[0], v[1]))
}

fn g_mul(rng: &mut ChaCha8Rng, _: &[Fault]) -> Case {
    let inputs = vec![randn(rng, &[3, 4]), randn(rng, &[3, 4])];
    projected(rng, inputs, &[3, 4], |t, v| t.mul(v[0], v[1]))
}

fn g_relu(rng: &mut ChaCha8Rng, faults: &[Fault]) -> Case {
    let faults = faults.to_vec();
    let inputs = vec![randn(rng, &[12])];
    projected(rng, inputs, &[12], move |t, v| relu_op(t, v[0], &faults))
}

fn g_log(rng: &mut ChaCha8Rng, _: &[Fault]) -> Case {
    let inputs = vec![uniform(rng, &[10], 0.5, 2.0)];
    projected(rng, inputs, &[10], |t, v| t.log(v[0]))
}

fn g_max_scalar(rng: &mut ChaCha8Rng, _: &[Fault]) -> Case {
    let inputs = vec![randn(rng, &[10])];
    projected(rng, inputs, &[10], |t, v| t.max_scalar(v[0], 0.1))
}

fn g_scale_shift(rng: &mut ChaCha8Rng, _: &[Fault]) -> Case {
    let (c, d) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    let inputs = vec![randn(rng, &[6])];
    projected(rng, inputs, &[6], move |t, v| {
        let s = t.scale(v[0], c);
        Ok(t.add_scalar(s, d))
    })
}

fn g_channel_mix(rng: &mut ChaCha8Rng, _: &[Fault]) -> Case {
    let relu = rng.random::<bool>();
    let inputs = vec![randn(rng, &[3, 5]), randn(rng, &[2, 3]), randn(rng, &[2])];
    projected(rng, inputs, &[2, 5], move |t, v| t.channel_mix(v[0], v[1], v[2], relu))
}

fn g_softmax(rng: &mut ChaCha8Rng, _: &[Fault]) -> Case {
    let axis = rng.random_range(0..3);
    let inputs = vec![randn(rng, &[2, 4, 3])];
    projected(rng, inputs, &[2, 4, 3], move |t, v| t.softmax_axis(v[0], axis))
}

fn g_reduce(rng: &mut ChaCha8Rng, _: &[Fault]) -> Case {
    let op = if rng.random::<bool>() { ReduceOp::Sum } else { ReduceOp::Mean };
    let inputs = vec![randn(rng, &[2, 4, 3])];
    projected(rng, inputs, &[2, 3], move |t, v| t.reduce(op, v[0], Some(1)))
}

fn g_concat(rng: &mut ChaCha8Rng, _: &[Fault]) -> Case {
    let inputs = vec![randn(rng, &[2, 3]), randn(rng, &[2, 2])];
    projected(rng, inputs, &[2, 5], |t, v| t.concat(&[v[0], v[1]], 1))
}

fn g_reshape(rng: &mut ChaCha8Rng, _: &[Fault]) -> Case {
    let inputs = vec![randn(rng, &[2, 6])];
    projected(rng, inputs, &[3, 4], |t, v| t.reshape(v[0], &[3, 4]))
}

fn g_gather(rng: &mut ChaCha8Rng, _: &[Fault]) -> Case {
    let mut b = LinearMapBuilder::new(8);
    for _ in 0..5 {
        for _ in 0..3 {
            b.tap(rng.random_range(0..8), rng.random_range(-1.0..1.0));
        }
        b.end_row();
    }
    let map = b.build();
    let inputs = vec![randn(rng, &[8])];
    projected(rng, inputs, &[5], move |t, v| t.gather(v[0], map.clone(), &[5]))
}

fn g_bilinear(rng: &mut ChaCha8Rng, _: &[Fault]) -> Case {
    let (u, v) = (rng.random_range(-1.0..5.0), rng.random_range(-1.0..4.0));
    let inputs = vec![randn(rng, &[2, 3, 4])];
    projected(rng, inputs, &[2], move |t, x| t.bilinear_sample2d(x[0], u, v))
}

fn g_trilinear(rng: &mut ChaCha8Rng, _: &[Fault]) -> Case {
    let (w, v, u) = (
        rng.random_range(-1.0..3.0),
        rng.random_range(-1.0..3.0),
        rng.random_range(-1.0..4.0),
    );
    let inputs = vec![randn(rng, &[2, 2, 2, 3])];
    projected(rng, inputs, &[2], move |t, x| t.trilinear_sample3d(x[0], w, v, u))
}

fn g_stereo_volume(rng: &mut ChaCha8Rng, _: &[Fault]) -> Case {
    let inputs = vec![randn(rng, &[2, 3, 6]), randn(rng, &[2, 3, 6])];
    projected(rng, inputs, &[4, 4, 3, 6], |t, v| {
        let (rig, bins) = small_rig();
        Ok(build_stereo_volume(t, v[0], v[1], &rig, &bins)?.var)
    })
}

fn g_depth_distribution(rng: &mut ChaCha8Rng, _: &[Fault]) -> Case {
    let inputs = vec![randn(rng, &[4, 3, 6])];
    projected(rng, inputs, &[4, 3, 6], |t, v| Ok(depth_distribution(t, v[0])?.var))
}

fn g_volume_3d(rng: &mut ChaCha8Rng, _: &[Fault]) -> Case {
    let inputs = vec![randn(rng, &[2, 4, 3, 6]), randn(rng, &[2, 3, 6]), randn(rng, &[4, 3, 6])];
    projected(rng, inputs, &[4, 4, 2, 4], |t, v| {
        let (rig, bins) = small_rig();
        let prob = depth_distribution(t, v[2])?;
        Ok(build_3d_volume(t, v[0], v[1], &prob, &small_grid(), &rig, &bins)?.var)
    })
}

fn g_collapse_bev(rng: &mut ChaCha8Rng, _: &[Fault]) -> Case {
    let inputs = vec![randn(rng, &[2, 4, 2, 4])];
    projected(rng, inputs, &[4, 4, 4], |t, v| Ok(collapse_to_bev(t, v[0])?.var))
}

fn g_pipeline(rng: &mut ChaCha8Rng, _: &[Fault]) -> Case {
    let inputs = vec![
        randn(rng, &[2, 3, 6]),
        randn(rng, &[2, 3, 6]),
        randn(rng, &[2, 3, 6]),
        randn(rng, &[1, 4]),
    ];
    projected(rng, inputs, &[12, 4, 4], |t, v| {
        let (rig, bins) = small_rig();
        let vst = build_stereo_volume(t, v[0], v[1], &rig, &bins)?;
        let b = t.constant(Tensor::zeros(&[1])?);
        let logits = t.channel_mix(vst.var, v[3], b, false)?;
        let logits = t.reshape(logits, &[4, 3, 6])?;
        let prob = depth_distribution(t, logits)?;
        let v3d = build_3d_volume(t, vst.var, v[2], &prob, &small_grid(), &rig, &bins)?;
        Ok(collapse_to_bev(t, v3d.var)?.var)
    })
}

fn g_depth_loss(rng: &mut ChaCha8Rng, _: &[Fault]) -> Case {
    let (_, bins) = small_rig();
    let z = uniform(rng, &[2, 3], bins.z_min(), bins.z_max());
    let valid = binary(rng, &[2, 3], 0.8);
    Case {
        inputs: vec![randn(rng, &[4, 2, 3])],
        f: Box::new(move |t, v| {
            let prob = depth_distribution(t, v[0])?;
            unimodal_depth_loss(t, prob.var, &z, &valid, &bins)
        }),
    }
}

fn g_imitation(rng: &mut ChaCha8Rng, _: &[Fault]) -> Case {
    let relu_after = rng.random::<bool>();
    let mut teacher = randn(rng, &[2, 4, 5]).into_data();
    for v in teacher.iter_mut() {
        if rng.random::<f64>() < 0.3 {
            *v = 0.0;
        }
    }
    let teacher = Tensor::new(vec![2, 4, 5], teacher).expect("shape");
    let masks = MaskPair::new(binary(rng, &[4, 5], 0.6), binary(rng, &[4, 5], 0.6)).expect("masks");
    Case {
        inputs: vec![randn(rng, &[3, 4, 5]), randn(rng, &[2, 3]), randn(rng, &[2])],
        f: Box::new(move |t, v| {
            let adapter = Adapter {
                weight: v[1],
                bias: v[2],
                relu_after,
            };
            imitation_layer_loss(t, v[0], &adapter, &teacher, &masks)
        }),
    }
}

fn focal_case(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>, usize) {
    let labels: Vec<f64> = (0..20).map(|_| if rng.random::<f64>() < 0.2 { 1.0 } else { 0.0 }).collect();
    let weights: Vec<f64> = (0..20).map(|_| if rng.random::<f64>() < 0.9 { 1.0 } else { 0.0 }).collect();
    let num_pos = labels.iter().filter(|l| **l > 0.5).count();
    (labels, weights, num_pos)
}

fn g_focal(rng: &mut ChaCha8Rng, _: &[Fault]) -> Case {
    let (labels, weights, num_pos) = focal_case(rng);
    Case {
        inputs: vec![randn(rng, &[20]).map(|v| 2.0 * v)],
        f: Box::new(move |t, v| focal_cls_loss(t, v[0], &labels, &weights, num_pos)),
    }
}

fn l1_targets(rng: &mut ChaCha8Rng) -> Vec<(usize, [f64; 7])> {
    (0..3)
        .map(|i| (2 * i, std::array::from_fn(|_| rng.random_range(-0.5..0.5))))
        .collect()
}

fn g_smooth_l1(rng: &mut ChaCha8Rng, _: &[Fault]) -> Case {
    let targets = l1_targets(rng);
    Case {
        inputs: vec![randn(rng, &[6, 7]).map(|v| 0.3 * v)],
        f: Box::new(move |t, v| l1_box_loss(t, v[0], &targets)),
    }
}

fn dir_targets(rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    (0..3).map(|i| (2 * i + 1, rng.random_range(0..2))).collect()
}

fn g_dir(rng: &mut ChaCha8Rng, _: &[Fault]) -> Case {
    let targets = dir_targets(rng);
    Case {
        inputs: vec![randn(rng, &[6, 2])],
        f: Box::new(move |t, v| dir_cls_loss(t, v[0], &targets)),
    }
}

fn random_box(rng: &mut ChaCha8Rng) -> Box3D {
    Box3D::new(
        [rng.random_range(-5.0..5.0), rng.random_range(0.5..1.5), rng.random_range(5.0..30.0)],
        [rng.random_range(1.0..4.5), rng.random_range(0.5..2.0), rng.random_range(1.0..2.0)],
        rng.random_range(-3.0..3.0),
        0,
    )
    .expect("valid box")
}

/// Positives for the IoU loss and residual predictions near their targets.
fn iou_case(rng: &mut ChaCha8Rng) -> (Vec<(usize, Box3D, Box3D)>, Tensor) {
    let mut positives = Vec::new();
    let mut pred = vec![0.0; 4 * 7];
    for a in 0..4 {
        let anchor = random_box(rng);
        let mut p = anchor.params();
        for v in p.iter_mut().take(3) {
            *v += rng.random_range(-0.4..0.4);
        }
        for v in p.iter_mut().skip(3).take(3) {
            *v *= rng.random_range(0.8..1.25);
        }
        p[6] += rng.random_range(-0.5..0.5);
        let gt = Box3D::from_params(p, 0).expect("valid gt");
        let r = encode_residuals(&gt, &anchor).expect("encodable");
        for k in 0..7 {
            pred[a * 7 + k] = r[k] + 0.15 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
        }
        positives.push((a, anchor, gt));
    }
    (positives, Tensor::new(vec![4, 7], pred).expect("shape"))
}

fn g_iou(rng: &mut ChaCha8Rng, _: &[Fault]) -> Case {
    let (positives, pred) = iou_case(rng);
    Case {
        inputs: vec![pred],
        f: Box::new(move |t, v| iou_loss_residuals(t, v[0], &positives)),
    }
}

fn g_total(rng: &mut ChaCha8Rng, _: &[Fault]) -> Case {
    let (_, bins) = small_rig();
    let z = uniform(rng, &[2, 3], bins.z_min(), bins.z_max());
    let valid = binary(rng, &[2, 3], 0.8);
    let (labels, weights, num_pos) = focal_case(rng);
    let l1 = l1_targets(rng);
    let dirs = dir_targets(rng);
    let (positives, pred) = iou_case(rng);
    let teacher = randn(rng, &[2, 4, 5]);
    let masks = MaskPair::new(binary(rng, &[4, 5], 0.6), binary(rng, &[4, 5], 0.6)).expect("masks");
    let lw = LossWeights {
        lambda_reg_l1: rng.random_range(0.1..1.0),
        lambda_reg_iou: rng.random_range(0.1..1.0),
        lambda_dir: rng.random_range(0.1..1.0),
        lambda_2d: rng.random_range(0.1..1.0),
        lambda_im: rng.random_range(0.1..1.0),
    };
    let inputs = vec![
        randn(rng, &[4, 2, 3]),
        randn(rng, &[20]),
        pred,
        randn(rng, &[6, 2]),
        randn(rng, &[3, 4, 5]),
        randn(rng, &[2, 3]),
        randn(rng, &[2]),
        randn(rng, &[20]),
    ];
    let (labels2, weights2, num_pos2) = focal_case(rng);
    Case {
        inputs,
        f: Box::new(move |t, v| {
            let prob = depth_distribution(t, v[0])?;
            let adapter = Adapter {
                weight: v[5],
                bias: v[6],
                relu_after: false,
            };
            let regs = t.concat(&[v[2], v[2]], 0)?;
            let terms = LossTerms {
                depth: unimodal_depth_loss(t, prob.var, &z, &valid, &bins)?,
                cls: focal_cls_loss(t, v[1], &labels, &weights, num_pos)?,
                reg_l1: l1_box_loss(t, regs, &l1)?,
                reg_iou: iou_loss_residuals(t, v[2], &positives)?,
                dir: dir_cls_loss(t, v[3], &dirs)?,
                im: imitation_layer_loss(t, v[4], &adapter, &teacher, &masks)?,
                two_d: focal_cls_loss(t, v[7], &labels2, &weights2, num_pos2)?,
            };
            total_loss_tape(t, &terms, &lw)
        }),
    }
}

const SUITE: [(&str, Generator); 27] = [
    ("add", g_add),
    ("sub", g_sub),
    ("mul", g_mul),
    ("relu", g_relu),
    ("log", g_log),
    ("max_scalar", g_max_scalar),
    ("scale_add_scalar", g_scale_shift),
    ("channel_mix", g_channel_mix),
    ("softmax", g_softmax),
    ("reduce", g_reduce),
    ("concat", g_concat),
    ("reshape", g_reshape),
    ("gather", g_gather),
    ("bilinear_sample2d", g_bilinear),
    ("trilinear_sample3d", g_trilinear),
    ("stereo_volume", g_stereo_volume),
    ("depth_distribution", g_depth_distribution),
    ("volume_3d", g_volume_3d),
    ("collapse_bev", g_collapse_bev),
    ("volume_pipeline", g_pipeline),
    ("loss_depth_unimodal", g_depth_loss),
    ("loss_imitation", g_imitation),
    ("loss_focal", g_focal),
    ("loss_smooth_l1", g_smooth_l1),
    ("loss_direction", g_dir),
    ("loss_iou", g_iou),
    ("loss_total", g_total),
];

/// Names of the checked ops, in report order.
pub fn suite_ops() -> Vec<&'static str> {
    SUITE.iter().map(|(n, _)| *n).collect()
}

/// Checks every op at `cfg.points` random instances. Each op draws from its
/// own seeded stream, so reports do not depend on op order.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut ops = Vec::with_capacity(SUITE.len());
    for (k, (name, generator)) in SUITE.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9d2c_5680_0000_0000 ^ k as u64));
        let mut worst = 0.0f64;
        for _ in 0..cfg.points {
            let case = generator(&mut rng, &cfg.faults);
            let err = gradcheck_multi(&case.f, &case.inputs, cfg.eps)?;
            worst = worst.max(err);
        }
        ops.push(OpReport {
            op: name,
            points: cfg.points,
            worst,
        });
    }
    Ok(GradcheckReport {
        ops,
        tolerance: cfg.tolerance,
    })
}
