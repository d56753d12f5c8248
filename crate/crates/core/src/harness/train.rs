//! Plain gradient descent over mini-batches of prepared scenes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::model::{features, init_params, losses, Context, Params, PreparedScene, TapeParams};
use crate::error::{ensure, Error, Result};
use crate::losses::{total_loss_tape, LossTerms, LossWeights};
use crate::tensor::Tape;

/// Batch-mean losses at the parameters of step `step`, before its update.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub terms: LossTerms<f64>,
    pub total: f64,
}

pub fn metrics_csv(rows: &[LogRow]) -> String {
    let mut s = String::from("step");
    for name in LossTerms::NAMES {
        s.push(',');
        s.push_str(name);
    }
    s.push_str(",total\n");
    for r in rows {
        let _ = write!(s, "{}", r.step);
        for v in r.terms.to_array() {
            let _ = write!(s, ",{v}");
        }
        let _ = writeln!(s, ",{}", r.total);
    }
    s
}

/// Weights actually placed on the tape: imitation off zeroes its weight, so
/// the term is still computed and logged but carries no gradient.
pub fn effective_weights(cfg: &RunConfig, imitation: bool) -> LossWeights {
    let mut w = cfg.loss_weights;
    if !imitation {
        w.lambda_im = 0.0;
    }
    w
}

/// Loss value and parameter gradients of one scene.
fn scene_step(
    ctx: &Context,
    params: &Params,
    scene: &PreparedScene,
    cfg: &RunConfig,
    weights: &LossWeights,
    want_grad: bool,
) -> Result<(LossTerms<f64>, f64, Option<Params>)> {
    let mut tape = Tape::new();
    let p = TapeParams::record(&mut tape, params, want_grad);
    let f = features(&mut tape, ctx, &p, &scene.data)?;
    let (terms, _) = losses(&mut tape, &p, scene, &f, &cfg.imitation_layers)?;
    let values = terms.map(|v| tape.value(v).item().unwrap_or(f64::NAN));
    let total = total_loss_tape(&mut tape, &terms, weights)?;
    let total_value = tape.value(total).item()?;
    ensure!(total_value.is_finite(), NonFinite, "total loss is {total_value}");
    if !want_grad {
        return Ok((values, total_value, None));
    }
    let grads = tape.backward(total)?;
    let g = p
        .iter()
        .map(|(k, v)| (k.clone(), grads.tensor(*v)))
        .collect();
    Ok((values, total_value, Some(g)))
}

/// Deterministic batch order: a fresh seeded permutation per epoch.
struct Batches {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
    n: usize,
}

impl Batches {
    fn new(n: usize, seed: u64) -> Self {
        Batches {
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0xba7c_4e50_0000_0001),
            order: Vec::new(),
            pos: 0,
            n,
        }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size.min(self.n) {
            if self.pos == self.order.len() {
                self.order = (0..self.n).collect();
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Trains from seeded initial parameters for `cfg.train.steps` updates and
/// logs `steps + 1` rows; the last row is the loss after the final update.
pub fn train(
    cfg: &RunConfig,
    ctx: &Context,
    scenes: &[PreparedScene],
    imitation: bool,
) -> Result<(Params, Vec<LogRow>)> {
    ensure!(!scenes.is_empty(), Config, "training needs at least one scene");
    let t = &cfg.train;
    let weights = effective_weights(cfg, imitation);
    let mut params = init_params(ctx, t.seed);
    let mut batches = Batches::new(scenes.len(), t.seed);
    let mut rows = Vec::with_capacity(t.steps + 1);
    for step in 0..=t.steps {
        let update = step < t.steps;
        let batch = batches.next(t.batch_size);
        let inv = 1.0 / batch.len() as f64;
        let mut acc = [0.0; 7];
        let mut total = 0.0;
        let mut grad: Option<Params> = None;
        for &i in &batch {
            let (terms, tv, g) = scene_step(ctx, &params, &scenes[i], cfg, &weights, update)
                .map_err(|e| at_step(step, e))?;
            for (a, v) in acc.iter_mut().zip(terms.to_array()) {
                *a += v * inv;
            }
            total += tv * inv;
            if let Some(g) = g {
                match &mut grad {
                    None => grad = Some(g),
                    Some(sum) => {
                        for (k, t) in g {
                            let dst = sum.get_mut(&k).expect("same parameter set");
                            *dst = add(dst, &t);
                        }
                    }
                }
            }
        }
        let terms = LossTerms {
            depth: acc[0],
            cls: acc[1],
            reg_l1: acc[2],
            reg_iou: acc[3],
            dir: acc[4],
            im: acc[5],
            two_d: acc[6],
        };
        rows.push(LogRow { step, terms, total });
        if let Some(g) = grad {
            apply_update(&mut params, &g, inv, t.learning_rate, t.clip_norm)
                .map_err(|e| at_step(step, e))?;
        }
    }
    Ok((params, rows))
}

fn at_step(step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(m) => Error::NonFinite(format!("step {step}: {m}")),
        Error::Numerical(m) => Error::Numerical(format!("step {step}: {m}")),
        other => other,
    }
}

fn add(a: &crate::tensor::Tensor, b: &crate::tensor::Tensor) -> crate::tensor::Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    crate::tensor::Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

/// Parameter group of a parameter name: the name without its last
/// component, e.g. `head.cls` for `head.cls.w`.
fn group(name: &str) -> &str {
    name.rsplit_once('.').map_or(name, |(g, _)| g)
}

/// Fixed per-group multiplier on the step size.
pub fn step_scale(name: &str) -> f64 {
    let group = group(name);
    match group {
        "head.cls" => 3.0,
        "head.reg" => 0.05,
        _ => match group.split('.').next().unwrap_or("") {
            "depth" => 0.01,
            "sem" | "head2d" => 0.1,
            "agg" => 0.2,
            _ => 1.0,
        },
    }
}

/// `p -= lr * s * clip(g * scale)` with per-group multipliers `s`. Each
/// group's scaled step is clipped to norm `clip` on its own, so a burst in
/// one group does not stall the others.
fn apply_update(params: &mut Params, grad: &Params, scale: f64, lr: f64, clip: f64) -> Result<()> {
    let mut norms: BTreeMap<&str, f64> = BTreeMap::new();
    for (k, t) in grad {
        let s = step_scale(k) * scale;
        *norms.entry(group(k)).or_default() += t.data().iter().map(|g| (g * s) * (g * s)).sum::<f64>();
    }
    for (g, n) in norms.iter_mut() {
        *n = n.sqrt();
        ensure!(n.is_finite(), NonFinite, "gradient norm of {g} is {n}");
    }
    for (k, g) in grad {
        let norm = norms[group(k)];
        let factor = if clip > 0.0 && norm > clip {
            scale * clip / norm
        } else {
            scale
        };
        let lr = lr * step_scale(k);
        let p = params.get_mut(k).expect("same parameter set");
        let data = p
            .data()
            .iter()
            .zip(g.data())
            .map(|(v, gv)| v - lr * factor * gv)
            .collect();
        *p = crate::tensor::Tensor::new(p.shape().to_vec(), data)?;
    }
    Ok(())
}
