use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Feature maps the student can imitate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ImitationLayer {
    #[serde(rename = "V3D")]
    V3d,
    #[serde(rename = "BEV")]
    Bev,
    #[serde(rename = "BEV_AGG")]
    BevAgg,
}

impl ImitationLayer {
    pub fn name(self) -> &'static str {
        match self {
            ImitationLayer::V3d => "V3D",
            ImitationLayer::Bev => "BEV",
            ImitationLayer::BevAgg => "BEV_AGG",
        }
    }

    /// Whether the teacher map is taken after a ReLU.
    pub fn default_relu(self) -> bool {
        matches!(self, ImitationLayer::BevAgg)
    }
}

impl fmt::Display for ImitationLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which layers are imitated, with each adapter's ReLU flag, and the weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImitationSpec {
    pub layers: BTreeMap<ImitationLayer, bool>,
    pub lambda_im: f64,
}

impl Default for ImitationSpec {
    fn default() -> Self {
        let layers = [ImitationLayer::V3d, ImitationLayer::BevAgg]
            .into_iter()
            .map(|l| (l, l.default_relu()))
            .collect();
        ImitationSpec {
            layers,
            lambda_im: 1.0,
        }
    }
}

impl ImitationSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.layers.is_empty(), Config, "imitation needs at least one layer");
        ensure!(
            self.lambda_im.is_finite() && self.lambda_im >= 0.0,
            Config,
            "lambda_im must be finite and non-negative"
        );
        Ok(())
    }
}

/// Binary masks over a layer's spatial positions.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPair {
    pub fg: Tensor,
    pub sp: Tensor,
}

impl MaskPair {
    pub fn new(fg: Tensor, sp: Tensor) -> Result<Self> {
        ensure!(
            fg.shape() == sp.shape(),
            Shape,
            "mask shapes differ: {:?} vs {:?}",
            fg.shape(),
            sp.shape()
        );
        for m in [&fg, &sp] {
            ensure!(
                m.data().iter().all(|&v| v == 0.0 || v == 1.0),
                InvalidArgument,
                "masks must be binary"
            );
        }
        Ok(MaskPair { fg, sp })
    }

    /// `M_fg * M_sp`.
    pub fn combined(&self) -> Vec<f64> {
        self.fg
            .data()
            .iter()
            .zip(self.sp.data())
            .map(|(a, b)| a * b)
            .collect()
    }
}

/// 1x1 adapter `g` on the tape.
#[derive(Clone, Copy, Debug)]
pub struct Adapter {
    pub weight: Var,
    pub bias: Var,
    pub relu_after: bool,
}

/// Divides every channel by the mean absolute value of its non-zero entries;
/// all-zero channels stay zero.
pub fn normalize_teacher(teacher: &Tensor) -> Tensor {
    let c = teacher.shape()[0];
    let per = teacher.numel() / c;
    let mut out = teacher.data().to_vec();
    for ch in 0..c {
        let row = &mut out[ch * per..(ch + 1) * per];
        let (mut sum, mut count) = (0.0, 0usize);
        for &v in row.iter() {
            if v != 0.0 {
                sum += v.abs();
                count += 1;
            }
        }
        if count > 0 {
            let norm = sum / count as f64;
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }
    Tensor::new(teacher.shape().to_vec(), out).expect("shape unchanged")
}

/// Masked squared error of one layer, divided by its own `N_pos`.
pub fn imitation_layer_loss(
    tape: &mut Tape,
    student: Var,
    adapter: &Adapter,
    teacher: &Tensor,
    masks: &MaskPair,
) -> Result<Var> {
    let g = tape.channel_mix(student, adapter.weight, adapter.bias, adapter.relu_after)?;
    let tg = tape.shared(g);
    ensure!(
        tg.shape() == teacher.shape(),
        Shape,
        "adapted student {:?} and teacher {:?} differ",
        tg.shape(),
        teacher.shape()
    );
    ensure!(
        masks.fg.shape() == &teacher.shape()[1..],
        Shape,
        "masks {:?} do not match teacher spatial shape {:?}",
        masks.fg.shape(),
        &teacher.shape()[1..]
    );
    let mask = masks.combined();
    let n_pos: f64 = mask.iter().sum();
    if n_pos == 0.0 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let target = normalize_teacher(teacher);
    let per = mask.len();
    let c = teacher.shape()[0];
    let inv = 1.0 / n_pos;
    let mut resid = vec![0.0; c * per];
    let mut loss = 0.0;
    for ch in 0..c {
        for p in 0..per {
            if mask[p] != 0.0 {
                let i = ch * per + p;
                let r = tg.data()[i] - target.data()[i];
                resid[i] = r;
                loss += r * r;
            }
        }
    }
    loss *= inv;
    let backward = Box::new(move |gr: &[f64], _: &[bool]| {
        vec![resid.iter().map(|r| 2.0 * r * inv * gr[0]).collect()]
    });
    Ok(tape.custom(&[g], Tensor::scalar(loss), backward))
}

/// One imitated layer: student map, its adapter, teacher map and masks.
pub struct ImitationTerm<'a> {
    pub layer: ImitationLayer,
    pub student: Var,
    pub adapter: Adapter,
    pub teacher: &'a Tensor,
    pub masks: &'a MaskPair,
}

/// Sum of per-layer terms in layer order. Returns the total and the
/// per-layer values.
pub fn imitation_loss(
    tape: &mut Tape,
    terms: &[ImitationTerm<'_>],
) -> Result<(Var, BTreeMap<ImitationLayer, f64>)> {
    ensure!(!terms.is_empty(), InvalidArgument, "no imitation layers given");
    let mut per_layer = BTreeMap::new();
    let mut acc: Option<Var> = None;
    let mut sorted: Vec<&ImitationTerm<'_>> = terms.iter().collect();
    sorted.sort_by_key(|t| t.layer);
    for t in sorted {
        let l = imitation_layer_loss(tape, t.student, &t.adapter, t.teacher, t.masks)?;
        per_layer.insert(t.layer, tape.value(l).item()?);
        acc = Some(match acc {
            Some(a) => tape.add(a, l)?,
            None => l,
        });
    }
    Ok((acc.expect("terms is non-empty"), per_layer))
}
