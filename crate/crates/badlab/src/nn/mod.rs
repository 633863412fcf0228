//! A small deterministic CPU neural-network stack: explicit
//! forward/backward layers over `ndarray` tensors, enough for the conv
//! classifiers, VAEs, and gradient-based attacks this crate needs.
//!
//! Everything is f32, seeded, and bit-reproducible: parallel loops write
//! disjoint outputs or reduce over fixed-size chunks in a fixed order.

pub mod conv;
pub mod init;
pub mod layers;
pub mod loss;
pub mod optim;

use ndarray::{Array, Dimension};

/// A trainable tensor with its gradient and momentum buffers.
#[derive(Debug, Clone)]
pub struct Param<D: Dimension> {
    pub v: Array<f32, D>,
    pub g: Array<f32, D>,
    pub m: Array<f32, D>,
}

impl<D: Dimension> Param<D> {
    pub fn new(v: Array<f32, D>) -> Self {
        let g = Array::zeros(v.raw_dim());
        let m = Array::zeros(v.raw_dim());
        Param { v, g, m }
    }
}

/// Borrowed flat views of one parameter, handed to the optimizer and the
/// checkpoint writer.
pub struct ParamMut<'a> {
    pub value: &'a mut [f32],
    pub grad: &'a mut [f32],
    pub momentum: &'a mut [f32],
    pub shape: Vec<usize>,
}

pub struct ParamRef<'a> {
    pub value: &'a [f32],
    pub shape: Vec<usize>,
}

impl<D: Dimension> Param<D> {
    pub fn as_mut(&mut self) -> ParamMut<'_> {
        let shape = self.v.shape().to_vec();
        ParamMut {
            value: self.v.as_slice_mut().expect("contiguous param"),
            grad: self.g.as_slice_mut().expect("contiguous grad"),
            momentum: self.m.as_slice_mut().expect("contiguous momentum"),
            shape,
        }
    }

    pub fn as_ref(&self) -> ParamRef<'_> {
        ParamRef {
            value: self.v.as_slice().expect("contiguous param"),
            shape: self.v.shape().to_vec(),
        }
    }
}

/// Anything with named trainable parameters.
///
/// The visitation order must be stable: it defines both the optimizer
/// update order and the checkpoint tensor order.
pub trait Parameters {
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamMut<'_>));
    fn visit(&self, f: &mut dyn FnMut(&str, ParamRef<'_>));

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |_, p| p.grad.fill(0.0));
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, p| n += p.value.len());
        n
    }
}

/// How a forward pass is run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalization layers, caches kept for backward.
    Train,
    /// Running statistics, caches kept — used when attacks need input
    /// gradients of a frozen model.
    EvalGrad,
}

impl Mode {
    pub fn is_train(self) -> bool {
        matches!(self, Mode::Train)
    }
}
