use alloc::vec;
use alloc::vec::Vec;

use super::{Layer, Param, ParamKind};
use crate::rng::Rng;
use crate::tensor::{gemm, Tensor};

/// 2-D convolution over `(N, C, H, W)` with square kernels. Supports dense
/// (`groups == 1`) and depthwise (`groups == in == out`) connectivity.
pub struct Conv2d {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    depthwise: bool,
    weight: Param,
    bias: Option<Param>,
    input: Option<Tensor>,
}

impl Conv2d {
    /// He-normal initialized convolution, scaled by fan-out.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        assert!(
            groups == 1 || (groups == in_channels && groups == out_channels),
            "only dense and depthwise convolutions are supported"
        );
        let depthwise = groups != 1;
        let per_out = if depthwise { kernel * kernel } else { in_channels * kernel * kernel };
        let fan_out = out_channels * kernel * kernel / groups;
        let weight = Param::normal(ParamKind::Weight, out_channels * per_out, libm::sqrtf(2.0 / fan_out as f32), rng);
        let bias = bias.then(|| Param::zeros(ParamKind::Bias, out_channels));
        Self { in_channels, out_channels, kernel, stride, padding, depthwise, weight, bias, input: None }
    }

    /// Convolution with explicit weights `(out, in/groups, k, k)`, for tests
    /// and hand-built toy models.
    pub fn from_weights(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        weight: Vec<f32>,
        bias: Option<Vec<f32>>,
    ) -> Self {
        assert_eq!(weight.len(), out_channels * in_channels * kernel * kernel);
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            depthwise: false,
            weight: Param::new(ParamKind::Weight, weight),
            bias: bias.map(|b| Param::new(ParamKind::Bias, b)),
            input: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    fn out_size(&self, size: usize) -> usize {
        (size + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0 && !self.depthwise
    }

    fn im2col(&self, x: &[f32], h: usize, w: usize, ho: usize, wo: usize, cols: &mut [f32]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let plane = ho * wo;
        for c in 0..self.in_channels {
            let xc = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((c * k + ky) * k + kx) * plane..][..plane];
                    let (lo, hi) = valid_range(kx, s, p, w, wo);
                    for oy in 0..ho {
                        let dst = &mut row[oy * wo..(oy + 1) * wo];
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize || lo >= hi {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &xc[iy as usize * w..(iy as usize + 1) * w];
                        dst[..lo].fill(0.0);
                        dst[hi..].fill(0.0);
                        if s == 1 {
                            let start = lo + kx - p;
                            dst[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                        } else {
                            for ox in lo..hi {
                                dst[ox] = src[ox * s + kx - p];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], h: usize, w: usize, ho: usize, wo: usize, dx: &mut [f32]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let plane = ho * wo;
        for c in 0..self.in_channels {
            let dxc = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((c * k + ky) * k + kx) * plane..][..plane];
                    let (lo, hi) = valid_range(kx, s, p, w, wo);
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut dxc[iy as usize * w..(iy as usize + 1) * w];
                        let src = &row[oy * wo..(oy + 1) * wo];
                        for ox in lo..hi {
                            dst[ox * s + kx - p] += src[ox];
                        }
                    }
                }
            }
        }
    }

    fn forward_impl(&self, x: &Tensor) -> Tensor {
        let (n, c, h, w) = x.dims4();
        assert_eq!(c, self.in_channels, "conv input channels");
        let (ho, wo) = (self.out_size(h), self.out_size(w));
        let mut out = Tensor::zeros(&[n, self.out_channels, ho, wo]);
        let plane = ho * wo;
        if self.depthwise {
            self.depthwise_forward(x, &mut out);
        } else {
            let ckk = c * self.kernel * self.kernel;
            let mut cols = if self.is_pointwise() { Vec::new() } else { vec![0.0; ckk * plane] };
            for i in 0..n {
                let xi = &x.data()[i * c * h * w..(i + 1) * c * h * w];
                let oi = &mut out.data_mut()[i * self.out_channels * plane..(i + 1) * self.out_channels * plane];
                let b: &[f32] = if self.is_pointwise() {
                    xi
                } else {
                    self.im2col(xi, h, w, ho, wo, &mut cols);
                    &cols
                };
                gemm(self.out_channels, ckk, plane, &self.weight.value, false, b, false, 0.0, oi);
            }
        }
        if let Some(bias) = &self.bias {
            for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
                let b = bias.value[i % self.out_channels];
                chunk.iter_mut().for_each(|v| *v += b);
            }
        }
        out
    }

    fn depthwise_forward(&self, x: &Tensor, out: &mut Tensor) {
        let (n, c, h, w) = x.dims4();
        let (_, _, ho, wo) = out.dims4();
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        for i in 0..n {
            for ch in 0..c {
                let xc = &x.data()[(i * c + ch) * h * w..][..h * w];
                let oc = &mut out.data_mut()[(i * c + ch) * ho * wo..][..ho * wo];
                let wk = &self.weight.value[ch * k * k..(ch + 1) * k * k];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wk[ky * k + kx];
                        let (lo, hi) = valid_range(kx, s, p, w, wo);
                        for oy in 0..ho {
                            let iy = (oy * s + ky) as isize - p as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src = &xc[iy as usize * w..(iy as usize + 1) * w];
                            let dst = &mut oc[oy * wo..(oy + 1) * wo];
                            if s == 1 {
                                let start = lo + kx - p;
                                let d = &mut dst[lo..hi];
                                let sv = &src[start..start + d.len()];
                                for (a, b) in d.iter_mut().zip(sv) {
                                    *a += wv * *b;
                                }
                            } else {
                                for ox in lo..hi {
                                    dst[ox] += wv * src[ox * s + kx - p];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn depthwise_backward(&mut self, x: &Tensor, grad: &Tensor, dx: &mut Tensor) {
        let (n, c, h, w) = x.dims4();
        let (_, _, ho, wo) = grad.dims4();
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        for i in 0..n {
            for ch in 0..c {
                let xc = &x.data()[(i * c + ch) * h * w..][..h * w];
                let gc = &grad.data()[(i * c + ch) * ho * wo..][..ho * wo];
                let dxc = &mut dx.data_mut()[(i * c + ch) * h * w..][..h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = self.weight.value[ch * k * k + ky * k + kx];
                        let mut dw = 0.0f32;
                        let (lo, hi) = valid_range(kx, s, p, w, wo);
                        for oy in 0..ho {
                            let iy = (oy * s + ky) as isize - p as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = iy as usize * w;
                            let g = &gc[oy * wo..(oy + 1) * wo];
                            if s == 1 {
                                let start = row + lo + kx - p;
                                let gs = &g[lo..hi];
                                let xs = &xc[start..start + gs.len()];
                                dw += gs.iter().zip(xs).map(|(a, b)| a * b).sum::<f32>();
                                for (d, gv) in dxc[start..start + gs.len()].iter_mut().zip(gs) {
                                    *d += wv * *gv;
                                }
                            } else {
                                for ox in lo..hi {
                                    let ix = row + ox * s + kx - p;
                                    dw += g[ox] * xc[ix];
                                    dxc[ix] += wv * g[ox];
                                }
                            }
                        }
                        self.weight.grad[ch * k * k + ky * k + kx] += dw;
                    }
                }
            }
        }
    }
}

/// Output columns `lo..hi` whose input column `ox * s + kx - p` is in bounds.
fn valid_range(kx: usize, s: usize, p: usize, w: usize, wo: usize) -> (usize, usize) {
    let lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
    // largest ox with ox * s + kx - p <= w - 1
    let hi = if w + p < kx + 1 { 0 } else { (w + p - kx - 1) / s + 1 };
    (lo.min(wo), hi.min(wo).max(lo.min(wo)))
}

impl Layer for Conv2d {
    fn forward(&mut self, x: Tensor) -> Tensor {
        let y = self.forward_impl(&x);
        self.input = Some(x);
        y
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let x = self.input.take().expect("Conv2d::backward without forward");
        let (n, c, h, w) = x.dims4();
        let (_, o, ho, wo) = grad.dims4();
        let plane = ho * wo;
        if let Some(bias) = &mut self.bias {
            for (i, chunk) in grad.data().chunks(plane).enumerate() {
                bias.grad[i % o] += chunk.iter().sum::<f32>();
            }
        }
        let mut dx = Tensor::zeros(&[n, c, h, w]);
        if self.depthwise {
            self.depthwise_backward(&x, &grad, &mut dx);
            return dx;
        }
        let ckk = c * self.kernel * self.kernel;
        let pointwise = self.is_pointwise();
        let mut cols = if pointwise { Vec::new() } else { vec![0.0; ckk * plane] };
        let mut dcols = if pointwise { Vec::new() } else { vec![0.0; ckk * plane] };
        for i in 0..n {
            let xi = &x.data()[i * c * h * w..(i + 1) * c * h * w];
            let gi = &grad.data()[i * o * plane..(i + 1) * o * plane];
            if pointwise {
                gemm(o, plane, ckk, gi, false, xi, true, 1.0, &mut self.weight.grad);
                let dxi = &mut dx.data_mut()[i * c * h * w..(i + 1) * c * h * w];
                gemm(ckk, o, plane, &self.weight.value, true, gi, false, 0.0, dxi);
            } else {
                self.im2col(xi, h, w, ho, wo, &mut cols);
                gemm(o, plane, ckk, gi, false, &cols, true, 1.0, &mut self.weight.grad);
                gemm(ckk, o, plane, &self.weight.value, true, gi, false, 0.0, &mut dcols);
                let dxi = &mut dx.data_mut()[i * c * h * w..(i + 1) * c * h * w];
                self.col2im(&dcols, h, w, ho, wo, dxi);
            }
        }
        dx
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        self.forward_impl(x)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }

    fn clear_cache(&mut self) {
        self.input = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{check_gradients, random_input};

    fn naive_conv(x: &Tensor, conv: &Conv2d) -> Tensor {
        let (n, c, h, w) = x.dims4();
        let (k, s, p) = (conv.kernel, conv.stride, conv.padding);
        let (ho, wo) = (conv.out_size(h), conv.out_size(w));
        let o = conv.out_channels;
        let mut out = Tensor::zeros(&[n, o, ho, wo]);
        for i in 0..n {
            for oc in 0..o {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = conv.bias.as_ref().map_or(0.0, |b| b.value[oc]);
                        let chans: Vec<usize> = if conv.depthwise { vec![oc] } else { (0..c).collect() };
                        for (ci, &ic) in chans.iter().enumerate() {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * s + ky) as isize - p as isize;
                                    let ix = (ox * s + kx) as isize - p as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let wi = if conv.depthwise {
                                        oc * k * k + ky * k + kx
                                    } else {
                                        ((oc * c + ci) * k + ky) * k + kx
                                    };
                                    acc += conv.weight.value[wi]
                                        * x.data()[((i * c + ic) * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                        out.data_mut()[((i * o + oc) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_direct_summation() {
        let mut rng = Rng::seed(3);
        let cases = [
            (3, 4, 3, 1, 1, 1),
            (3, 5, 3, 2, 1, 1),
            (2, 3, 7, 2, 3, 1),
            (4, 6, 1, 1, 0, 1),
            (4, 6, 1, 2, 0, 1),
            (5, 5, 3, 1, 1, 5),
            (5, 5, 5, 2, 2, 5),
            (3, 3, 3, 2, 1, 3),
        ];
        for (idx, &(ci, co, k, s, p, g)) in cases.iter().enumerate() {
            let mut conv = Conv2d::new(ci, co, k, s, p, g, true, &mut rng);
            if let Some(b) = &mut conv.bias {
                b.value.iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 * i as f32);
            }
            let x = random_input(&[2, ci, 9, 8], idx as u64);
            let got = conv.infer(&x);
            let want = naive_conv(&x, &conv);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-4, "case {idx}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::seed(5);
        for (idx, &(ci, co, k, s, p, g)) in
            [(2, 3, 3, 1, 1, 1), (2, 3, 3, 2, 1, 1), (3, 2, 1, 1, 0, 1), (3, 3, 3, 2, 1, 3)].iter().enumerate()
        {
            let mut conv = Conv2d::new(ci, co, k, s, p, g, true, &mut rng);
            let x = random_input(&[2, ci, 5, 6], 10 + idx as u64);
            let err = check_gradients(&mut conv, &x, 7);
            assert!(err < 1e-2, "case {idx}: relative error {err}");
        }
    }

    #[test]
    fn valid_range_covers_exactly_in_bounds_columns() {
        for w in 1..9 {
            for k in 1..6 {
                for s in 1..4 {
                    for p in 0..k {
                        if w + 2 * p < k {
                            continue;
                        }
                        let wo = (w + 2 * p - k) / s + 1;
                        for kx in 0..k {
                            let (lo, hi) = valid_range(kx, s, p, w, wo);
                            for ox in 0..wo {
                                let ix = (ox * s + kx) as isize - p as isize;
                                let inside = ix >= 0 && ix < w as isize;
                                assert_eq!(inside, ox >= lo && ox < hi, "w{w} k{k} s{s} p{p} kx{kx} ox{ox}");
                            }
                        }
                    }
                }
            }
        }
    }
}
