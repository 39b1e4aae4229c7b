use alloc::vec;
use alloc::vec::Vec;

use super::{Layer, Param, ParamKind};
use crate::tensor::Tensor;

const EPS: f32 = 1e-5;
const MOMENTUM: f32 = 0.1;

/// Batch normalization over `(N, H, W)` per channel. Training mode uses batch
/// statistics and updates the running estimates; evaluation mode uses the
/// running estimates.
pub struct BatchNorm2d {
    channels: usize,
    gamma: Param,
    beta: Param,
    running_mean: Param,
    running_var: Param,
    cache: Option<Cache>,
}

struct Cache {
    xhat: Tensor,
    inv_std: Vec<f32>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::filled(ParamKind::Weight, channels, 1.0),
            beta: Param::zeros(ParamKind::Bias, channels),
            running_mean: Param::zeros(ParamKind::Buffer, channels),
            running_var: Param::filled(ParamKind::Buffer, channels, 1.0),
            cache: None,
        }
    }
}

impl Layer for BatchNorm2d {
    fn forward(&mut self, x: Tensor) -> Tensor {
        let (n, c, h, w) = x.dims4();
        assert_eq!(c, self.channels);
        let plane = h * w;
        let count = (n * plane) as f64;
        let mut xhat = x;
        let mut out = Tensor::zeros(xhat.shape());
        let mut inv_std = vec![0.0f32; c];
        for ch in 0..c {
            let (mut sum, mut sq) = (0.0f64, 0.0f64);
            for i in 0..n {
                for &v in &xhat.data()[(i * c + ch) * plane..][..plane] {
                    sum += v as f64;
                    sq += v as f64 * v as f64;
                }
            }
            let mean = sum / count;
            let var = (sq / count - mean * mean).max(0.0);
            let istd = 1.0 / libm::sqrt(var + EPS as f64);
            inv_std[ch] = istd as f32;
            let unbiased = if count > 1.0 { var * count / (count - 1.0) } else { var };
            self.running_mean.value[ch] = (1.0 - MOMENTUM) * self.running_mean.value[ch] + MOMENTUM * mean as f32;
            self.running_var.value[ch] = (1.0 - MOMENTUM) * self.running_var.value[ch] + MOMENTUM * unbiased as f32;
            let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
            let (mean, istd) = (mean as f32, istd as f32);
            for i in 0..n {
                let off = (i * c + ch) * plane;
                let xs = &mut xhat.data_mut()[off..off + plane];
                let ys = &mut out.data_mut()[off..off + plane];
                for (xv, yv) in xs.iter_mut().zip(ys.iter_mut()) {
                    *xv = (*xv - mean) * istd;
                    *yv = g * *xv + b;
                }
            }
        }
        self.cache = Some(Cache { xhat, inv_std });
        out
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let Cache { xhat, inv_std } = self.cache.take().expect("BatchNorm2d::backward without forward");
        let (n, c, h, w) = grad.dims4();
        let plane = h * w;
        let m = (n * plane) as f32;
        let mut dx = Tensor::zeros(grad.shape());
        for ch in 0..c {
            let (mut sum_dy, mut sum_dy_xhat) = (0.0f64, 0.0f64);
            for i in 0..n {
                let off = (i * c + ch) * plane;
                for (dy, xh) in grad.data()[off..off + plane].iter().zip(&xhat.data()[off..off + plane]) {
                    sum_dy += *dy as f64;
                    sum_dy_xhat += (*dy * *xh) as f64;
                }
            }
            self.gamma.grad[ch] += sum_dy_xhat as f32;
            self.beta.grad[ch] += sum_dy as f32;
            let g = self.gamma.value[ch];
            let k = g * inv_std[ch] / m;
            let (sdy, sdyx) = (sum_dy as f32, sum_dy_xhat as f32);
            for i in 0..n {
                let off = (i * c + ch) * plane;
                let dys = &grad.data()[off..off + plane];
                let xhs = &xhat.data()[off..off + plane];
                for ((d, dy), xh) in dx.data_mut()[off..off + plane].iter_mut().zip(dys).zip(xhs) {
                    *d = k * (m * *dy - sdy - *xh * sdyx);
                }
            }
        }
        dx
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let (n, c, h, w) = x.dims4();
        let plane = h * w;
        let mut out = x.clone();
        for i in 0..n {
            for ch in 0..c {
                let scale = self.gamma.value[ch] / libm::sqrtf(self.running_var.value[ch] + EPS);
                let shift = self.beta.value[ch] - self.running_mean.value[ch] * scale;
                for v in &mut out.data_mut()[(i * c + ch) * plane..][..plane] {
                    *v = *v * scale + shift;
                }
            }
        }
        out
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.gamma);
        f(&self.beta);
        f(&self.running_mean);
        f(&self.running_var);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}
