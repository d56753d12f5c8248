//! Training objectives and their weighted composition.

mod depth;
mod detection;
mod imitation;

pub use depth::{triangle_weights, unimodal_depth_loss, unimodal_depth_loss_value, LOG_EPS};
pub use detection::{
    dir_cls_loss, focal_cls_loss, iou_loss_residuals, l1_box_loss, rotated_iou_loss, smooth_l1,
    FOCAL_ALPHA, FOCAL_GAMMA, SMOOTH_L1_BETA,
};
pub use imitation::{
    imitation_layer_loss, imitation_loss, normalize_teacher, Adapter, ImitationLayer,
    ImitationSpec, ImitationTerm, MaskPair,
};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::tensor::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_reg_l1: f64,
    pub lambda_reg_iou: f64,
    pub lambda_dir: f64,
    pub lambda_2d: f64,
    pub lambda_im: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_reg_l1: 0.5,
            lambda_reg_iou: 1.0,
            lambda_dir: 0.2,
            lambda_2d: 1.0,
            lambda_im: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_reg_l1,
            self.lambda_reg_iou,
            self.lambda_dir,
            self.lambda_2d,
            self.lambda_im,
        ];
        ensure!(
            all.iter().all(|w| w.is_finite() && *w >= 0.0),
            Config,
            "loss weights must be finite and non-negative, got {:?}",
            self
        );
        Ok(())
    }
}

/// One value per loss component, in logging order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms<T> {
    pub depth: T,
    pub cls: T,
    pub reg_l1: T,
    pub reg_iou: T,
    pub dir: T,
    pub im: T,
    pub two_d: T,
}

impl<T: Copy> LossTerms<T> {
    pub fn map<U>(&self, mut f: impl FnMut(T) -> U) -> LossTerms<U> {
        LossTerms {
            depth: f(self.depth),
            cls: f(self.cls),
            reg_l1: f(self.reg_l1),
            reg_iou: f(self.reg_iou),
            dir: f(self.dir),
            im: f(self.im),
            two_d: f(self.two_d),
        }
    }

    pub fn to_array(&self) -> [T; 7] {
        [
            self.depth,
            self.cls,
            self.reg_l1,
            self.reg_iou,
            self.dir,
            self.im,
            self.two_d,
        ]
    }
}

impl LossTerms<f64> {
    pub const NAMES: [&'static str; 7] = [
        "L_depth", "L_cls", "L_reg_l1", "L_reg_iou", "L_dir", "L_im", "L_2d",
    ];
}

fn coefficients(w: &LossWeights) -> [f64; 7] {
    [
        1.0,
        1.0,
        w.lambda_reg_l1,
        w.lambda_reg_iou,
        w.lambda_dir,
        w.lambda_im,
        w.lambda_2d,
    ]
}

/// `L_depth + L_cls + l1 L_reg + iou L_IoU + dir L_dir + im L_im + 2d L_2d`.
pub fn total_loss(terms: &LossTerms<f64>, weights: &LossWeights) -> Result<f64> {
    let values = terms.to_array();
    for (name, v) in LossTerms::NAMES.iter().zip(values) {
        ensure!(v.is_finite(), NonFinite, "loss component {name} is {v}");
    }
    Ok(values
        .iter()
        .zip(coefficients(weights))
        .map(|(v, c)| v * c)
        .sum())
}

/// Taped [`total_loss`]; components whose weight is zero are left off the
/// graph.
pub fn total_loss_tape(tape: &mut Tape, terms: &LossTerms<Var>, weights: &LossWeights) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (name, (var, c)) in LossTerms::NAMES
        .iter()
        .zip(terms.to_array().into_iter().zip(coefficients(weights)))
    {
        let v = tape.value(var).item()?;
        ensure!(v.is_finite(), NonFinite, "loss component {name} is {v}");
        if c == 0.0 {
            continue;
        }
        let scaled = if c == 1.0 { var } else { tape.scale(var, c) };
        acc = Some(match acc {
            Some(a) => tape.add(a, scaled)?,
            None => scaled,
        });
    }
    Ok(match acc {
        Some(a) => a,
        None => tape.constant(crate::tensor::Tensor::scalar(0.0)),
    })
}
