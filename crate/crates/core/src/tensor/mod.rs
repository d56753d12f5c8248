//! Dense row-major `f64` tensors and a reverse-mode gradient tape.

mod gradcheck;
mod io;
mod sample;
mod tape;

pub use gradcheck::{gradcheck, gradcheck_multi, relative_error, GRAD_FLOOR};
pub use io::{decode_tsr, encode_tsr, read_tsr, write_tsr};
pub use sample::{bilinear_weights, trilinear_weights, LinearMap, LinearMapBuilder};
pub use tape::{Backward, BinaryOp, Gradients, ReduceOp, Tape, UnaryOp, Var};

use crate::error::{ensure, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        validate_shape(&shape)?;
        let numel: usize = shape.iter().product();
        ensure!(
            numel == data.len(),
            Shape,
            "shape {:?} holds {} values, got {}",
            shape,
            numel,
            data.len()
        );
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        validate_shape(shape)?;
        let numel = shape.iter().product();
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
            requires_grad: false,
        })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
        }
    }

    pub fn from_slice(values: &[f64]) -> Self {
        Tensor {
            shape: vec![values.len().max(1)],
            data: if values.is_empty() {
                vec![0.0]
            } else {
                values.to_vec()
            },
            requires_grad: false,
        }
    }

    /// Marks the tensor as a leaf whose gradient is wanted.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn item(&self) -> Result<f64> {
        ensure!(
            self.data.len() == 1,
            Shape,
            "expected a single value, tensor has shape {:?}",
            self.shape
        );
        Ok(self.data[0])
    }

    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        ensure!(
            index.len() == self.shape.len(),
            Shape,
            "index of rank {} into tensor of rank {}",
            index.len(),
            self.shape.len()
        );
        let mut off = 0;
        for (axis, (&i, &n)) in index.iter().zip(&self.shape).enumerate() {
            if i >= n {
                return Err(Error::OutOfRange(format!(
                    "index {i} on axis {axis} of size {n}"
                )));
            }
            off = off * n + i;
        }
        Ok(off)
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
            requires_grad: false,
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    ensure!(!shape.is_empty(), Shape, "tensor rank must be at least 1");
    ensure!(
        shape.iter().all(|&n| n > 0),
        Shape,
        "dimension sizes must be positive, got {:?}",
        shape
    );
    Ok(())
}

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for axis in (0..shape.len().saturating_sub(1)).rev() {
        strides[axis] = strides[axis + 1] * shape[axis + 1];
    }
    strides
}
