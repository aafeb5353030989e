//! Dense tensors and a tape-based reverse-mode autodiff engine.

mod gradcheck;
pub mod kernels;
mod tape;

use std::sync::Arc;

use crate::error::{IdcError, Result};
use crate::scalar::Scalar;

pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{AttentionSpec, CrossEntropy, Tape, Var};

/// Row-major n-dimensional array with an optional gradient buffer.
///
/// Values live behind an `Arc` so binding a parameter onto a [`Tape`] is a
/// pointer copy. Mutation goes through [`Tensor::data_mut`], which only
/// copies if a tape still holds the buffer.
#[derive(Clone, Debug)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Arc<Vec<S>>,
    requires_grad: bool,
    grad: Option<Vec<S>>,
}

pub(crate) fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(IdcError::Shape(format!("extents must be positive, got {shape:?}")));
    }
    let numel: usize = shape.iter().product();
    if numel != len {
        return Err(IdcError::Shape(format!(
            "shape {shape:?} holds {numel} elements but {len} were given"
        )));
    }
    Ok(())
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: &[usize], data: Vec<S>) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::new(data),
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![S::zero(); n]).expect("zeros: invalid shape")
    }

    pub fn scalar(v: S) -> Self {
        Self::new(&[1], vec![v]).expect("scalar shape")
    }

    pub(crate) fn from_shared(shape: Vec<usize>, data: Arc<Vec<S>>) -> Self {
        Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_requires_grad(mut self, on: bool) -> Self {
        self.requires_grad = on;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub(crate) fn shared(&self) -> &Arc<Vec<S>> {
        &self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        if !on {
            self.grad = None;
        }
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    /// Adds `g` into the gradient buffer, creating it on first use.
    pub fn accumulate_grad(&mut self, g: &[S]) -> Result<()> {
        if g.len() != self.numel() {
            return Err(IdcError::Shape(format!(
                "gradient of length {} for tensor of shape {:?}",
                g.len(),
                self.shape
            )));
        }
        match &mut self.grad {
            Some(buf) => kernels::add_into(buf, g),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality of shape and values.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }
}

#[cfg(test)]
mod tests;
