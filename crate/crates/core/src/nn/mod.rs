//! Layers with hand-written forward and backward passes.
//!
//! Every layer has two forward paths: [`Layer::forward`] runs in training
//! mode and caches what [`Layer::backward`] needs, [`Layer::infer`] runs in
//! evaluation mode through `&self` so a trained model can serve concurrent
//! readers.

mod act;
mod blocks;
mod conv;
mod linear;
mod norm;
pub(crate) mod pool;

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

pub use act::{Act, Activation};
pub use blocks::{DenseConcat, Residual, SqueezeExcite};
pub use conv::Conv2d;
pub use linear::Linear;
pub use norm::BatchNorm2d;
pub use pool::{AvgPool2d, MaxPool2d};

use crate::rng::Rng;
use crate::tensor::Tensor;

/// What a parameter slot holds; the optimizer only touches trainable kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    /// Running statistics: serialized with the weights, never optimized.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Param {
    pub kind: ParamKind,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn new(kind: ParamKind, value: Vec<f32>) -> Self {
        let grad = vec![0.0; value.len()];
        Self { kind, value, grad }
    }

    pub fn zeros(kind: ParamKind, len: usize) -> Self {
        Self::new(kind, vec![0.0; len])
    }

    pub fn filled(kind: ParamKind, len: usize, v: f32) -> Self {
        Self::new(kind, vec![v; len])
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(kind: ParamKind, len: usize, bound: f32, rng: &mut Rng) -> Self {
        let value = (0..len).map(|_| rng.uniform_f32(-bound, bound)).collect();
        Self::new(kind, value)
    }

    /// Normal with mean 0 and standard deviation `std`.
    pub fn normal(kind: ParamKind, len: usize, std: f32, rng: &mut Rng) -> Self {
        let value = (0..len).map(|_| rng.normal_f32(std)).collect();
        Self::new(kind, value)
    }

    pub fn is_trainable(&self) -> bool {
        self.kind != ParamKind::Buffer
    }
}

pub trait Layer: Send + Sync {
    /// Training-mode forward pass; caches activations for `backward`.
    fn forward(&mut self, x: Tensor) -> Tensor;

    /// Propagates `grad` (dLoss/dOutput) back, accumulating parameter
    /// gradients, and returns dLoss/dInput. Must follow a `forward` call.
    fn backward(&mut self, grad: Tensor) -> Tensor;

    /// Evaluation-mode forward pass.
    fn infer(&self, x: &Tensor) -> Tensor;

    fn visit_params(&self, f: &mut dyn FnMut(&Param));

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param));

    /// Drops cached activations.
    fn clear_cache(&mut self) {}
}

/// Number of trainable scalars in a layer.
pub fn trainable_count(layer: &dyn Layer) -> usize {
    let mut n = 0;
    layer.visit_params(&mut |p| {
        if p.is_trainable() {
            n += p.value.len();
        }
    });
    n
}

#[derive(Default)]
pub struct Sequential {
    layers: Vec<Box<dyn Layer>>,
}

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, layer: impl Layer + 'static) -> &mut Self {
        self.layers.push(Box::new(layer));
        self
    }

    pub fn with(mut self, layer: impl Layer + 'static) -> Self {
        self.layers.push(Box::new(layer));
        self
    }

    pub fn extend(&mut self, other: Sequential) {
        self.layers.extend(other.layers);
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl Layer for Sequential {
    fn forward(&mut self, mut x: Tensor) -> Tensor {
        for layer in &mut self.layers {
            x = layer.forward(x);
        }
        x
    }

    fn backward(&mut self, mut grad: Tensor) -> Tensor {
        for layer in self.layers.iter_mut().rev() {
            grad = layer.backward(grad);
        }
        grad
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let mut iter = self.layers.iter();
        let Some(first) = iter.next() else {
            return x.clone();
        };
        let mut y = first.infer(x);
        for layer in iter {
            y = layer.infer(&y);
        }
        y
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        for layer in &self.layers {
            layer.visit_params(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for layer in &mut self.layers {
            layer.visit_params_mut(f);
        }
    }

    fn clear_cache(&mut self) {
        for layer in &mut self.layers {
            layer.clear_cache();
        }
    }
}
