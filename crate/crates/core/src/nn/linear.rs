use alloc::vec::Vec;

use super::{Layer, Param, ParamKind};
use crate::rng::Rng;
use crate::tensor::{gemm, Tensor};

/// Fully connected layer on `(N, in)` rows: `y = x·Wᵀ + b`.
pub struct Linear {
    in_features: usize,
    out_features: usize,
    pub(crate) weight: Param,
    pub(crate) bias: Param,
    input: Option<Tensor>,
}

impl Linear {
    /// Zero bias, weights uniform in `±1/sqrt(in_features)`.
    pub fn new(in_features: usize, out_features: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / libm::sqrtf(in_features as f32);
        Self {
            in_features,
            out_features,
            weight: Param::uniform(ParamKind::Weight, out_features * in_features, bound, rng),
            bias: Param::zeros(ParamKind::Bias, out_features),
            input: None,
        }
    }

    pub fn from_weights(in_features: usize, out_features: usize, weight: Vec<f32>, bias: Vec<f32>) -> Self {
        assert_eq!(weight.len(), in_features * out_features);
        assert_eq!(bias.len(), out_features);
        Self {
            in_features,
            out_features,
            weight: Param::new(ParamKind::Weight, weight),
            bias: Param::new(ParamKind::Bias, bias),
            input: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }

    pub fn weight(&self) -> &[f32] {
        &self.weight.value
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias.value
    }

    pub fn param_count(&self) -> usize {
        self.weight.value.len() + self.bias.value.len()
    }
}

impl Layer for Linear {
    fn forward(&mut self, x: Tensor) -> Tensor {
        let y = self.infer(&x);
        self.input = Some(x);
        y
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let x = self.input.take().expect("Linear::backward without forward");
        let n = x.shape()[0];
        let (i, o) = (self.in_features, self.out_features);
        gemm(o, n, i, grad.data(), true, x.data(), false, 1.0, &mut self.weight.grad);
        for row in grad.data().chunks(o) {
            for (b, g) in self.bias.grad.iter_mut().zip(row) {
                *b += *g;
            }
        }
        let mut dx = Tensor::zeros(&[n, i]);
        gemm(n, o, i, grad.data(), false, &self.weight.value, false, 0.0, dx.data_mut());
        dx
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let n = x.shape()[0];
        assert_eq!(x.len(), n * self.in_features, "linear input width");
        let mut y = Tensor::zeros(&[n, self.out_features]);
        // Row by row so a batched call is bit-identical to single-row calls.
        for (xr, yr) in x.data().chunks(self.in_features).zip(y.data_mut().chunks_mut(self.out_features)) {
            yr.copy_from_slice(&self.bias.value);
            gemm(1, self.in_features, self.out_features, xr, false, &self.weight.value, true, 1.0, yr);
        }
        y
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }

    fn clear_cache(&mut self) {
        self.input = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{check_gradients, random_input};

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::seed(1);
        let mut lin = Linear::new(4, 3, &mut rng);
        lin.bias.value = alloc::vec![0.1, -0.2, 0.3];
        let err = check_gradients(&mut lin, &random_input(&[5, 4], 2), 3);
        assert!(err < 1e-3, "relative error {err}");
    }

    #[test]
    fn initialization_is_bounded_with_zero_bias() {
        let mut rng = Rng::seed(1);
        let lin = Linear::new(100, 5, &mut rng);
        assert!(lin.weight().iter().all(|w| w.abs() <= 0.1));
        assert!(lin.bias().iter().all(|b| *b == 0.0));
    }
}
