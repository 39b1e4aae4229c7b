use super::{Layer, Param};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Relu6,
    Hardswish,
    Hardsigmoid,
    Silu,
    Sigmoid,
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + libm::expf(-x))
}

impl Activation {
    #[inline(always)]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Relu6 => x.clamp(0.0, 6.0),
            Activation::Hardswish => x * (x + 3.0).clamp(0.0, 6.0) / 6.0,
            Activation::Hardsigmoid => (x + 3.0).clamp(0.0, 6.0) / 6.0,
            Activation::Silu => x * sigmoid(x),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Applies the activation in place. Dispatches once per slice so the
    /// inner loops vectorize.
    pub fn apply_slice(self, xs: &mut [f32]) {
        macro_rules! each {
            ($k:path) => {
                xs.iter_mut().for_each(|v| *v = $k.apply(*v))
            };
        }
        match self {
            Activation::Relu => each!(Activation::Relu),
            Activation::Relu6 => each!(Activation::Relu6),
            Activation::Hardswish => each!(Activation::Hardswish),
            Activation::Hardsigmoid => each!(Activation::Hardsigmoid),
            Activation::Silu => each!(Activation::Silu),
            Activation::Sigmoid => each!(Activation::Sigmoid),
        }
    }

    /// `grad *= derivative(x)` elementwise.
    pub fn backward_slice(self, xs: &[f32], grad: &mut [f32]) {
        macro_rules! each {
            ($k:path) => {
                grad.iter_mut().zip(xs).for_each(|(g, v)| *g *= $k.derivative(*v))
            };
        }
        match self {
            Activation::Relu => each!(Activation::Relu),
            Activation::Relu6 => each!(Activation::Relu6),
            Activation::Hardswish => each!(Activation::Hardswish),
            Activation::Hardsigmoid => each!(Activation::Hardsigmoid),
            Activation::Silu => each!(Activation::Silu),
            Activation::Sigmoid => each!(Activation::Sigmoid),
        }
    }

    /// d apply / dx, evaluated at the pre-activation `x`.
    #[inline(always)]
    pub fn derivative(self, x: f32) -> f32 {
        match self {
            Activation::Relu => (x > 0.0) as u8 as f32,
            Activation::Relu6 => (x > 0.0 && x < 6.0) as u8 as f32,
            Activation::Hardswish => {
                if x <= -3.0 {
                    0.0
                } else if x >= 3.0 {
                    1.0
                } else {
                    (2.0 * x + 3.0) / 6.0
                }
            }
            Activation::Hardsigmoid => (x > -3.0 && x < 3.0) as u8 as f32 / 6.0,
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }
}

/// Elementwise activation layer.
pub struct Act {
    kind: Activation,
    input: Option<Tensor>,
}

impl Act {
    pub fn new(kind: Activation) -> Self {
        Self { kind, input: None }
    }
}

impl Layer for Act {
    fn forward(&mut self, x: Tensor) -> Tensor {
        let y = self.infer(&x);
        self.input = Some(x);
        y
    }

    fn backward(&mut self, mut grad: Tensor) -> Tensor {
        let x = self.input.take().expect("Act::backward without forward");
        self.kind.backward_slice(x.data(), grad.data_mut());
        grad
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let mut y = x.clone();
        self.kind.apply_slice(y.data_mut());
        y
    }

    fn visit_params(&self, _: &mut dyn FnMut(&Param)) {}

    fn visit_params_mut(&mut self, _: &mut dyn FnMut(&mut Param)) {}

    fn clear_cache(&mut self) {
        self.input = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_match_central_differences_away_from_kinks() {
        let kinds = [
            Activation::Relu,
            Activation::Relu6,
            Activation::Hardswish,
            Activation::Hardsigmoid,
            Activation::Silu,
            Activation::Sigmoid,
        ];
        let points = [-4.1f32, -2.2, -0.7, 0.4, 1.3, 2.6, 5.2, 7.5];
        for kind in kinds {
            for &x in &points {
                let h = 1e-3f32;
                let num = (kind.apply(x + h) - kind.apply(x - h)) / (2.0 * h);
                assert!((num - kind.derivative(x)).abs() < 2e-3, "{kind:?} at {x}");
            }
        }
    }
}
