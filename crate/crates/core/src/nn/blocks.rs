//! Composite blocks: residual sums, dense concatenation, squeeze-excitation.

use super::pool::{global_avg_pool, global_avg_pool_backward};
use super::{Activation, Layer, Param, Sequential};
use crate::tensor::Tensor;

/// `post(body(x) + shortcut(x))`, shortcut defaulting to identity.
pub struct Residual {
    body: Sequential,
    shortcut: Option<Sequential>,
    post: Option<Activation>,
    sum: Option<Tensor>,
}

impl Residual {
    pub fn new(body: Sequential, shortcut: Option<Sequential>, post: Option<Activation>) -> Self {
        Self { body, shortcut, post, sum: None }
    }
}

impl Layer for Residual {
    fn forward(&mut self, x: Tensor) -> Tensor {
        let mut y = self.body.forward(x.clone());
        match &mut self.shortcut {
            Some(sc) => y.add_assign(&sc.forward(x)),
            None => y.add_assign(&x),
        }
        match self.post {
            Some(act) => {
                let mut out = y.clone();
                act.apply_slice(out.data_mut());
                self.sum = Some(y);
                out
            }
            None => y,
        }
    }

    fn backward(&mut self, mut grad: Tensor) -> Tensor {
        if let Some(act) = self.post {
            let sum = self.sum.take().expect("Residual::backward without forward");
            act.backward_slice(sum.data(), grad.data_mut());
        }
        let mut dx = self.body.backward(grad.clone());
        match &mut self.shortcut {
            Some(sc) => dx.add_assign(&sc.backward(grad)),
            None => dx.add_assign(&grad),
        }
        dx
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let mut y = self.body.infer(x);
        match &self.shortcut {
            Some(sc) => y.add_assign(&sc.infer(x)),
            None => y.add_assign(x),
        }
        if let Some(act) = self.post {
            act.apply_slice(y.data_mut());
        }
        y
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.body.visit_params(f);
        if let Some(sc) = &self.shortcut {
            sc.visit_params(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.body.visit_params_mut(f);
        if let Some(sc) = &mut self.shortcut {
            sc.visit_params_mut(f);
        }
    }

    fn clear_cache(&mut self) {
        self.body.clear_cache();
        if let Some(sc) = &mut self.shortcut {
            sc.clear_cache();
        }
        self.sum = None;
    }
}

/// Channel concatenation `[x, body(x)]`, the DenseNet connectivity pattern.
pub struct DenseConcat {
    body: Sequential,
    in_channels: Option<usize>,
}

impl DenseConcat {
    pub fn new(body: Sequential) -> Self {
        Self { body, in_channels: None }
    }
}

fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, ca, h, w) = a.dims4();
    let cb = b.shape()[1];
    let plane = h * w;
    let mut out = Tensor::zeros(&[n, ca + cb, h, w]);
    for i in 0..n {
        let dst = &mut out.data_mut()[i * (ca + cb) * plane..(i + 1) * (ca + cb) * plane];
        dst[..ca * plane].copy_from_slice(&a.data()[i * ca * plane..(i + 1) * ca * plane]);
        dst[ca * plane..].copy_from_slice(&b.data()[i * cb * plane..(i + 1) * cb * plane]);
    }
    out
}

impl Layer for DenseConcat {
    fn forward(&mut self, x: Tensor) -> Tensor {
        let b = self.body.forward(x.clone());
        self.in_channels = Some(x.shape()[1]);
        concat_channels(&x, &b)
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let ca = self.in_channels.take().expect("DenseConcat::backward without forward");
        let (n, c, h, w) = grad.dims4();
        let cb = c - ca;
        let plane = h * w;
        let mut gx = Tensor::zeros(&[n, ca, h, w]);
        let mut gb = Tensor::zeros(&[n, cb, h, w]);
        for i in 0..n {
            let src = &grad.data()[i * c * plane..(i + 1) * c * plane];
            gx.data_mut()[i * ca * plane..(i + 1) * ca * plane].copy_from_slice(&src[..ca * plane]);
            gb.data_mut()[i * cb * plane..(i + 1) * cb * plane].copy_from_slice(&src[ca * plane..]);
        }
        gx.add_assign(&self.body.backward(gb));
        gx
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        concat_channels(x, &self.body.infer(x))
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.body.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.body.visit_params_mut(f);
    }

    fn clear_cache(&mut self) {
        self.body.clear_cache();
        self.in_channels = None;
    }
}

/// Channel gating `x · gate(squeeze(gap(x)))`. `squeeze` maps `(N, C, 1, 1)`
/// to `(N, C, 1, 1)` and must end in the gate activation.
pub struct SqueezeExcite {
    squeeze: Sequential,
    cache: Option<(Tensor, Tensor)>,
}

impl SqueezeExcite {
    pub fn new(squeeze: Sequential) -> Self {
        Self { squeeze, cache: None }
    }
}

fn scale_channels(x: &Tensor, s: &Tensor) -> Tensor {
    let (_, _, h, w) = x.dims4();
    let plane = h * w;
    let mut y = x.clone();
    for (chunk, &g) in y.data_mut().chunks_mut(plane).zip(s.data()) {
        chunk.iter_mut().for_each(|v| *v *= g);
    }
    y
}

impl Layer for SqueezeExcite {
    fn forward(&mut self, x: Tensor) -> Tensor {
        let s = self.squeeze.forward(global_avg_pool(&x));
        let y = scale_channels(&x, &s);
        self.cache = Some((x, s));
        y
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let (x, s) = self.cache.take().expect("SqueezeExcite::backward without forward");
        let (n, c, h, w) = x.dims4();
        let plane = h * w;
        let ds: alloc::vec::Vec<f32> = grad
            .data()
            .chunks(plane)
            .zip(x.data().chunks(plane))
            .map(|(g, xv)| g.iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        let dpooled = self.squeeze.backward(Tensor::from_vec(&[n, c, 1, 1], ds).unwrap());
        let mut dx = scale_channels(&grad, &s);
        dx.add_assign(&global_avg_pool_backward(&dpooled, h, w));
        dx
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let s = self.squeeze.infer(&global_avg_pool(x));
        scale_channels(x, &s)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.squeeze.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.squeeze.visit_params_mut(f);
    }

    fn clear_cache(&mut self) {
        self.squeeze.clear_cache();
        self.cache = None;
    }
}
