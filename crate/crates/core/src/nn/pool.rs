use alloc::vec;
use alloc::vec::Vec;

use super::{Layer, Param};
use crate::tensor::Tensor;

/// Max pooling with square windows; padded cells never win.
pub struct MaxPool2d {
    kernel: usize,
    stride: usize,
    padding: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self { kernel, stride, padding, cache: None }
    }

    fn run(&self, x: &Tensor, argmax: Option<&mut Vec<usize>>) -> Tensor {
        let (n, c, h, w) = x.dims4();
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let ho = (h + 2 * p - k) / s + 1;
        let wo = (w + 2 * p - k) / s + 1;
        let mut out = Tensor::zeros(&[n, c, ho, wo]);
        let mut idx = Vec::new();
        let track = argmax.is_some();
        if track {
            idx.reserve(n * c * ho * wo);
        }
        let od = out.data_mut();
        for plane in 0..n * c {
            let xp = &x.data()[plane * h * w..(plane + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_i = usize::MAX;
                    for ky in 0..k {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let i = iy as usize * w + ix as usize;
                            if xp[i] > best || best_i == usize::MAX {
                                best = xp[i];
                                best_i = i;
                            }
                        }
                    }
                    od[(plane * ho + oy) * wo + ox] = best;
                    if track {
                        idx.push(plane * h * w + best_i);
                    }
                }
            }
        }
        if let Some(a) = argmax {
            *a = idx;
        }
        out
    }
}

impl Layer for MaxPool2d {
    fn forward(&mut self, x: Tensor) -> Tensor {
        let mut argmax = Vec::new();
        let y = self.run(&x, Some(&mut argmax));
        self.cache = Some((argmax, x.shape().to_vec()));
        y
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let (argmax, shape) = self.cache.take().expect("MaxPool2d::backward without forward");
        let mut dx = Tensor::zeros(&shape);
        for (g, &i) in grad.data().iter().zip(&argmax) {
            dx.data_mut()[i] += *g;
        }
        dx
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        self.run(x, None)
    }

    fn visit_params(&self, _: &mut dyn FnMut(&Param)) {}

    fn visit_params_mut(&mut self, _: &mut dyn FnMut(&mut Param)) {}

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Average pooling with non-overlapping square windows and no padding.
pub struct AvgPool2d {
    kernel: usize,
    input_shape: Option<Vec<usize>>,
}

impl AvgPool2d {
    pub fn new(kernel: usize) -> Self {
        Self { kernel, input_shape: None }
    }
}

impl Layer for AvgPool2d {
    fn forward(&mut self, x: Tensor) -> Tensor {
        let y = self.infer(&x);
        self.input_shape = Some(x.shape().to_vec());
        y
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let shape = self.input_shape.take().expect("AvgPool2d::backward without forward");
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let k = self.kernel;
        let (ho, wo) = (h / k, w / k);
        let scale = 1.0 / (k * k) as f32;
        let mut dx = vec![0.0f32; n * c * h * w];
        for plane in 0..n * c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let g = grad.data()[(plane * ho + oy) * wo + ox] * scale;
                    for ky in 0..k {
                        for kx in 0..k {
                            dx[plane * h * w + (oy * k + ky) * w + ox * k + kx] += g;
                        }
                    }
                }
            }
        }
        Tensor::from_vec(&shape, dx).unwrap()
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let (n, c, h, w) = x.dims4();
        let k = self.kernel;
        let (ho, wo) = (h / k, w / k);
        let scale = 1.0 / (k * k) as f32;
        let mut out = Tensor::zeros(&[n, c, ho, wo]);
        let od = out.data_mut();
        for plane in 0..n * c {
            let xp = &x.data()[plane * h * w..(plane + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = 0.0;
                    for ky in 0..k {
                        for kx in 0..k {
                            s += xp[(oy * k + ky) * w + ox * k + kx];
                        }
                    }
                    od[(plane * ho + oy) * wo + ox] = s * scale;
                }
            }
        }
        out
    }

    fn visit_params(&self, _: &mut dyn FnMut(&Param)) {}

    fn visit_params_mut(&mut self, _: &mut dyn FnMut(&mut Param)) {}

    fn clear_cache(&mut self) {
        self.input_shape = None;
    }
}

/// Spatial mean of `(N, C, H, W)`, keeping the shape `(N, C, 1, 1)`.
pub(crate) fn global_avg_pool(x: &Tensor) -> Tensor {
    let (n, c, h, w) = x.dims4();
    let plane = h * w;
    let data = x.data().chunks(plane).map(|p| p.iter().sum::<f32>() / plane as f32).collect();
    Tensor::from_vec(&[n, c, 1, 1], data).unwrap()
}

/// Gradient of [`global_avg_pool`]: spreads each pooled gradient evenly.
pub(crate) fn global_avg_pool_backward(grad: &Tensor, h: usize, w: usize) -> Tensor {
    let (n, c) = (grad.shape()[0], grad.shape()[1]);
    let plane = h * w;
    let mut dx = Vec::with_capacity(n * c * plane);
    for &g in grad.data() {
        dx.extend(core::iter::repeat_n(g / plane as f32, plane));
    }
    Tensor::from_vec(&[n, c, h, w], dx).unwrap()
}
