//! Wengert-style tape. Every op appends a node holding its forward value and a
//! closure mapping the output gradient to gradients of its parents. Nodes are
//! appended in evaluation order, so the tape is topologically sorted by
//! construction and backward is a single reverse sweep.

use std::rc::Rc;

use super::sample::{bilinear_weights, trilinear_weights, LinearMap, LinearMapBuilder};
use super::Tensor;
use crate::error::{ensure, Error, Result};

/// Maps the output gradient to one gradient buffer per parent. `needs[i]` is
/// false for parents that do not require a gradient; their entry may be left
/// empty.
pub type Backward = Box<dyn Fn(&[f64], &[bool]) -> Vec<Vec<f64>>>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp {
    Relu,
    Log,
    /// `max(x, c)`; the gradient is 1 where `x > c`, else 0.
    MaxScalar(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
}

struct Node {
    value: Rc<Tensor>,
    parents: Vec<Var>,
    backward: Option<Backward>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor; zeros when the root did not depend on `var`.
    pub fn tensor(&self, var: Var) -> Tensor {
        let shape = self.shapes[var.0].clone();
        let data = match self.get(var) {
            Some(g) => g.to_vec(),
            None => vec![0.0; shape.iter().product()],
        };
        Tensor::new(shape, data).expect("gradient shape matches its node")
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf; it requires a gradient iff the tensor says so.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        self.push_leaf(tensor, requires_grad)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push_leaf(tensor, false)
    }

    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.push_leaf(tensor, true)
    }

    fn push_leaf(&mut self, tensor: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Rc::new(tensor),
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shared(&self, var: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes[var.0].value)
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Records an op computed outside the tape. `backward` receives the output
    /// gradient and must return one buffer per parent, in order.
    pub fn custom(&mut self, parents: &[Var], value: Tensor, backward: Backward) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value: Rc::new(value),
            parents: parents.to_vec(),
            backward: requires_grad.then_some(backward),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.shared(a), self.shared(b));
        let broadcast = if ta.shape() == tb.shape() {
            false
        } else if tb.numel() == 1 {
            true
        } else {
            return Err(Error::Shape(format!(
                "{op:?} of {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        };
        let bv = |i: usize| if broadcast { tb.data()[0] } else { tb.data()[i] };
        let data: Vec<f64> = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| match op {
                BinaryOp::Add => x + bv(i),
                BinaryOp::Sub => x - bv(i),
                BinaryOp::Mul => x * bv(i),
            })
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let backward: Backward = Box::new(move |g, needs| {
            let ga = if needs[0] {
                match op {
                    BinaryOp::Add | BinaryOp::Sub => g.to_vec(),
                    BinaryOp::Mul => {
                        let b = tb.data();
                        g.iter()
                            .enumerate()
                            .map(|(i, gi)| gi * if broadcast { b[0] } else { b[i] })
                            .collect()
                    }
                }
            } else {
                Vec::new()
            };
            let gb = if needs[1] {
                let full: Vec<f64> = match op {
                    BinaryOp::Add => g.to_vec(),
                    BinaryOp::Sub => g.iter().map(|x| -x).collect(),
                    BinaryOp::Mul => g.iter().zip(ta.data()).map(|(gi, a)| gi * a).collect(),
                };
                if broadcast {
                    vec![full.iter().sum()]
                } else {
                    full
                }
            } else {
                Vec::new()
            };
            vec![ga, gb]
        });
        Ok(self.custom(&[a, b], value, backward))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Result<Var> {
        let ta = self.shared(a);
        if op == UnaryOp::Log {
            if let Some(bad) = ta.data().iter().find(|&&x| !(x > 0.0)) {
                return Err(Error::InvalidArgument(format!(
                    "log of non-positive value {bad}"
                )));
            }
        }
        let value = ta.map(|x| match op {
            UnaryOp::Relu => x.max(0.0),
            UnaryOp::Log => x.ln(),
            UnaryOp::MaxScalar(c) => x.max(c),
        });
        let backward: Backward = Box::new(move |g, _| {
            let x = ta.data();
            let ga = g
                .iter()
                .zip(x)
                .map(|(&gi, &xi)| match op {
                    UnaryOp::Relu => {
                        if xi > 0.0 {
                            gi
                        } else {
                            0.0
                        }
                    }
                    UnaryOp::Log => gi / xi,
                    UnaryOp::MaxScalar(c) => {
                        if xi > c {
                            gi
                        } else {
                            0.0
                        }
                    }
                })
                .collect();
            vec![ga]
        });
        Ok(self.custom(&[a], value, backward))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Relu, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, a)
    }

    pub fn max_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(UnaryOp::MaxScalar(c), a)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.custom(
            &[a],
            value,
            Box::new(move |g, _| vec![g.iter().map(|x| x * c).collect()]),
        )
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        self.custom(&[a], value, Box::new(|g, _| vec![g.to_vec()]))
    }

    /// Per-position affine map over the leading channel axis:
    /// `out[o, p] = sum_i w[o, i] * x[i, p] + bias[o]`, optionally rectified.
    pub fn channel_mix(&mut self, x: Var, w: Var, bias: Var, relu_after: bool) -> Result<Var> {
        let (tx, tw, tb) = (self.shared(x), self.shared(w), self.shared(bias));
        ensure!(
            tw.ndim() == 2,
            Shape,
            "channel_mix weight must be [C_out, C_in], got {:?}",
            tw.shape()
        );
        let (cout, cin) = (tw.shape()[0], tw.shape()[1]);
        ensure!(
            tx.shape()[0] == cin,
            Shape,
            "channel_mix input has {} channels, weight expects {}",
            tx.shape()[0],
            cin
        );
        ensure!(
            tb.numel() == cout,
            Shape,
            "channel_mix bias has {} entries, expected {}",
            tb.numel(),
            cout
        );
        let positions = tx.numel() / cin;
        let mut out = vec![0.0; cout * positions];
        let (xd, wd, bd) = (tx.data(), tw.data(), tb.data());
        for o in 0..cout {
            let row = &mut out[o * positions..(o + 1) * positions];
            row.fill(bd[o]);
            for i in 0..cin {
                let wv = wd[o * cin + i];
                if wv == 0.0 {
                    continue;
                }
                let xr = &xd[i * positions..(i + 1) * positions];
                for (r, &xv) in row.iter_mut().zip(xr) {
                    *r += wv * xv;
                }
            }
            if relu_after {
                for r in row.iter_mut() {
                    *r = r.max(0.0);
                }
            }
        }
        let mut shape = tx.shape().to_vec();
        shape[0] = cout;
        let value = Tensor::new(shape, out)?;
        let out_rc = relu_after.then(|| value.data().to_vec());
        let backward: Backward = Box::new(move |g, needs| {
            let masked: Vec<f64>;
            let g = match &out_rc {
                Some(out) => {
                    masked = g
                        .iter()
                        .zip(out)
                        .map(|(&gi, &o)| if o > 0.0 { gi } else { 0.0 })
                        .collect();
                    &masked[..]
                }
                None => g,
            };
            let (xd, wd) = (tx.data(), tw.data());
            let mut gx = Vec::new();
            if needs[0] {
                gx = vec![0.0; cin * positions];
                for o in 0..cout {
                    let gr = &g[o * positions..(o + 1) * positions];
                    for i in 0..cin {
                        let wv = wd[o * cin + i];
                        if wv == 0.0 {
                            continue;
                        }
                        for (dst, &gv) in gx[i * positions..(i + 1) * positions].iter_mut().zip(gr) {
                            *dst += wv * gv;
                        }
                    }
                }
            }
            let mut gw = Vec::new();
            if needs[1] {
                gw = vec![0.0; cout * cin];
                for o in 0..cout {
                    let gr = &g[o * positions..(o + 1) * positions];
                    for i in 0..cin {
                        let xr = &xd[i * positions..(i + 1) * positions];
                        gw[o * cin + i] = gr.iter().zip(xr).map(|(a, b)| a * b).sum();
                    }
                }
            }
            let gb = if needs[2] {
                (0..cout)
                    .map(|o| g[o * positions..(o + 1) * positions].iter().sum())
                    .collect()
            } else {
                Vec::new()
            };
            vec![gx, gw, gb]
        });
        Ok(self.custom(&[x, w, bias], value, backward))
    }

    /// Softmax along `axis`, stabilized by subtracting the slice maximum.
    pub fn softmax_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = self.shared(x);
        let shape = tx.shape().to_vec();
        ensure!(
            axis < shape.len(),
            Shape,
            "softmax axis {axis} on rank {}",
            shape.len()
        );
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let xd = tx.data();
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let max = (0..n)
                    .map(|k| xd[base + k * inner])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..n {
                    let e = (xd[base + k * inner] - max).exp();
                    out[base + k * inner] = e;
                    total += e;
                }
                for k in 0..n {
                    out[base + k * inner] /= total;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        let y = Rc::new(value.data().to_vec());
        let backward: Backward = Box::new(move |g, _| {
            let mut gx = vec![0.0; g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * n * inner + i;
                    let dot: f64 = (0..n)
                        .map(|k| g[base + k * inner] * y[base + k * inner])
                        .sum();
                    for k in 0..n {
                        let idx = base + k * inner;
                        gx[idx] = y[idx] * (g[idx] - dot);
                    }
                }
            }
            vec![gx]
        });
        Ok(self.custom(&[x], value, backward))
    }

    pub fn reduce(&mut self, op: ReduceOp, x: Var, axis: Option<usize>) -> Result<Var> {
        let tx = self.shared(x);
        let shape = tx.shape().to_vec();
        let Some(axis) = axis else {
            let n = tx.numel();
            let total: f64 = tx.data().iter().sum();
            let (value, factor) = match op {
                ReduceOp::Sum => (total, 1.0),
                ReduceOp::Mean => (total / n as f64, 1.0 / n as f64),
            };
            return Ok(self.custom(
                &[x],
                Tensor::scalar(value),
                Box::new(move |g, _| vec![vec![g[0] * factor; n]]),
            ));
        };
        ensure!(
            axis < shape.len(),
            Shape,
            "reduce axis {axis} on rank {}",
            shape.len()
        );
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let factor = match op {
            ReduceOp::Sum => 1.0,
            ReduceOp::Mean => 1.0 / n as f64,
        };
        let xd = tx.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                for i in 0..inner {
                    out[o * inner + i] += xd[(o * n + k) * inner + i] * factor;
                }
            }
        }
        let mut out_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|&(a, _)| a != axis)
            .map(|(_, &s)| s)
            .collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let value = Tensor::new(out_shape, out)?;
        let backward: Backward = Box::new(move |g, _| {
            let mut gx = vec![0.0; outer * n * inner];
            for o in 0..outer {
                for k in 0..n {
                    for i in 0..inner {
                        gx[(o * n + k) * inner + i] = g[o * inner + i] * factor;
                    }
                }
            }
            vec![gx]
        });
        Ok(self.custom(&[x], value, backward))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        self.reduce(ReduceOp::Sum, x, None).expect("full reduction")
    }

    pub fn mean(&mut self, x: Var) -> Var {
        self.reduce(ReduceOp::Mean, x, None).expect("full reduction")
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        ensure!(!xs.is_empty(), InvalidArgument, "concat of zero tensors");
        let parts: Vec<Rc<Tensor>> = xs.iter().map(|&v| self.shared(v)).collect();
        let first = parts[0].shape().to_vec();
        ensure!(
            axis < first.len(),
            Shape,
            "concat axis {axis} on rank {}",
            first.len()
        );
        for p in &parts[1..] {
            let s = p.shape();
            ensure!(
                s.len() == first.len()
                    && s.iter()
                        .zip(&first)
                        .enumerate()
                        .all(|(a, (x, y))| a == axis || x == y),
                Shape,
                "concat on axis {axis} of {:?} and {:?}",
                first,
                s
            );
        }
        let inner: usize = first[axis + 1..].iter().product();
        let outer: usize = first[..axis].iter().product();
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let total_width: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total_width);
        for o in 0..outer {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first;
        shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        let value = Tensor::new(shape, out)?;
        let backward: Backward = Box::new(move |g, needs| {
            let mut grads: Vec<Vec<f64>> = widths
                .iter()
                .zip(needs)
                .map(|(&w, &need)| if need { Vec::with_capacity(outer * w) } else { Vec::new() })
                .collect();
            for o in 0..outer {
                let mut start = o * total_width;
                for (k, &w) in widths.iter().enumerate() {
                    if needs[k] {
                        grads[k].extend_from_slice(&g[start..start + w]);
                    }
                    start += w;
                }
            }
            grads
        });
        Ok(self.custom(xs, value, backward))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.custom(&[x], value, Box::new(|g, _| vec![g.to_vec()])))
    }

    /// Applies a sparse linear map to the flattened input; the result takes
    /// `shape`, whose element count must equal the map's output length.
    pub fn gather(&mut self, x: Var, map: LinearMap, shape: &[usize]) -> Result<Var> {
        self.gather_shared(x, Rc::new(map), shape)
    }

    /// [`Tape::gather`] with a map shared across tapes.
    pub fn gather_shared(&mut self, x: Var, map: Rc<LinearMap>, shape: &[usize]) -> Result<Var> {
        let tx = self.shared(x);
        ensure!(
            map.in_len() == tx.numel(),
            Shape,
            "map expects {} inputs, tensor has {}",
            map.in_len(),
            tx.numel()
        );
        ensure!(
            map.out_len() == shape.iter().product::<usize>(),
            Shape,
            "map produces {} outputs, shape {:?} holds {}",
            map.out_len(),
            shape,
            shape.iter().product::<usize>()
        );
        let value = Tensor::new(shape.to_vec(), map.apply(tx.data()))?;
        Ok(self.custom(
            &[x],
            value,
            Box::new(move |g, _| vec![map.apply_transpose(g)]),
        ))
    }

    /// Bilinear sample of `src[C, H, W]` at column `u`, row `v`, returning `[C]`.
    pub fn bilinear_sample2d(&mut self, src: Var, u: f64, v: f64) -> Result<Var> {
        let shape = self.shape(src).to_vec();
        ensure!(
            shape.len() == 3,
            Shape,
            "bilinear_sample2d expects [C, H, W], got {:?}",
            shape
        );
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let mut b = LinearMapBuilder::new(c * h * w);
        for ch in 0..c {
            bilinear_weights(h, w, u, v, |i, wt| b.tap(ch * h * w + i, wt));
            b.end_row();
        }
        self.gather(src, b.build(), &[c])
    }

    /// Trilinear sample of `src[C, D, H, W]` at (`w`, `v`, `u`), returning `[C]`.
    pub fn trilinear_sample3d(&mut self, src: Var, w: f64, v: f64, u: f64) -> Result<Var> {
        let shape = self.shape(src).to_vec();
        ensure!(
            shape.len() == 4,
            Shape,
            "trilinear_sample3d expects [C, D, H, W], got {:?}",
            shape
        );
        let (c, d, h, wd) = (shape[0], shape[1], shape[2], shape[3]);
        let plane = d * h * wd;
        let mut b = LinearMapBuilder::new(c * plane);
        for ch in 0..c {
            trilinear_weights([d, h, wd], w, v, u, |i, wt| b.tap(ch * plane + i, wt));
            b.end_row();
        }
        self.gather(src, b.build(), &[c])
    }

    /// Reverse sweep from a single-element `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = self.value(root);
        ensure!(
            root_value.numel() == 1,
            Shape,
            "backward root must be scalar, got shape {:?}",
            root_value.shape()
        );
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(g) = grads[idx].as_ref() else {
                continue;
            };
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|p| self.nodes[p.0].requires_grad)
                .collect();
            let parent_grads = backward(g, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((p, pg), need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                if !need {
                    continue;
                }
                debug_assert_eq!(pg.len(), self.nodes[p.0].value.numel());
                match &mut grads[p.0] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&pg) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }
}
