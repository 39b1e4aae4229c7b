//! Resize, dihedral augmentation and channel normalization.

use alloc::vec;
use alloc::vec::Vec;

use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// 8-bit RGB image, row-major `H × W × 3`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroSizeImage);
        }
        if data.len() != width * height * 3 {
            return Err(Error::ShapeMismatch {
                expected: alloc::format!("{} bytes", width * height * 3),
                got: alloc::format!("{} bytes", data.len()),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Bilinear resampling of one plane with half-pixel centers and edge
/// clamping, no antialiasing.
pub fn resize_plane(src: &[f32], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f32> {
    let axis = |d: usize, s: usize| -> Vec<(usize, usize, f32)> {
        let scale = s as f32 / d as f32;
        (0..d)
            .map(|i| {
                let pos = ((i as f32 + 0.5) * scale - 0.5).clamp(0.0, (s - 1) as f32);
                let lo = pos as usize;
                let hi = (lo + 1).min(s - 1);
                (lo, hi, pos - lo as f32)
            })
            .collect()
    };
    let xs = axis(dw, sw);
    let ys = axis(dh, sh);
    let mut out = vec![0.0; dw * dh];
    for (y, &(y0, y1, fy)) in ys.iter().enumerate() {
        let r0 = &src[y0 * sw..(y0 + 1) * sw];
        let r1 = &src[y1 * sw..(y1 + 1) * sw];
        for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
            out[y * dw + x] = top + (bottom - top) * fy;
        }
    }
    out
}

/// An element of the symmetry group of the square: rotate by
/// `quarter_turns × 90°` counter-clockwise, after an optional horizontal
/// flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dihedral {
    pub flip: bool,
    pub quarter_turns: u8,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral { flip: false, quarter_turns: 0 };

    pub fn all() -> [Dihedral; 8] {
        core::array::from_fn(|i| Dihedral { flip: i >= 4, quarter_turns: (i % 4) as u8 })
    }

    pub fn rotation() -> Self {
        Dihedral { flip: false, quarter_turns: 1 }
    }

    pub fn horizontal_flip() -> Self {
        Dihedral { flip: true, quarter_turns: 0 }
    }

    pub fn vertical_flip() -> Self {
        Dihedral { flip: true, quarter_turns: 2 }
    }

    /// Uniform draw from the eight elements.
    pub fn sample(rng: &mut Rng) -> Self {
        Self::all()[rng.index(8)]
    }

    /// `self` applied after `first`.
    pub fn compose(self, first: Dihedral) -> Dihedral {
        // R^a F^f ∘ R^b F^g = R^(a ± b) F^(f xor g), since F R^b = R^-b F.
        let b = if self.flip { (4 - first.quarter_turns) % 4 } else { first.quarter_turns };
        Dihedral { flip: self.flip ^ first.flip, quarter_turns: (self.quarter_turns + b) % 4 }
    }

    /// Source coordinate that lands at `(x, y)` of an `n × n` output.
    fn source(self, x: usize, y: usize, n: usize) -> (usize, usize) {
        let (mut sx, mut sy) = (x, y);
        // Undo the rotation: one counter-clockwise quarter turn maps source
        // (sx, sy) to (sy, n-1-sx).
        for _ in 0..self.quarter_turns {
            let (ox, oy) = (sx, sy);
            sx = n - 1 - oy;
            sy = ox;
        }
        if self.flip {
            sx = n - 1 - sx;
        }
        (sx, sy)
    }

    /// Applies the transform to a square `(C, n, n)` tensor.
    pub fn apply(self, x: &Tensor) -> Tensor {
        if self == Self::IDENTITY {
            return x.clone();
        }
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        assert_eq!(h, w, "dihedral transforms need square images");
        let mut out = Tensor::zeros(x.shape());
        let plane = h * w;
        for y in 0..h {
            for xx in 0..w {
                let (sx, sy) = self.source(xx, y, w);
                for ch in 0..c {
                    out.data_mut()[ch * plane + y * w + xx] = x.data()[ch * plane + sy * w + sx];
                }
            }
        }
        out
    }
}

/// Input size and per-channel normalization of the network input.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PreprocessConfig {
    pub image_size: usize,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for PreprocessConfig {
    /// 224 × 224 with the ImageNet channel statistics.
    fn default() -> Self {
        Self { image_size: 224, mean: [0.485, 0.456, 0.406], std: [0.229, 0.224, 0.225] }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < crate::model::MIN_INPUT_SIZE {
            return Err(Error::InvalidArgument(alloc::format!(
                "image_size must be at least {}",
                crate::model::MIN_INPUT_SIZE
            )));
        }
        if self.std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidArgument("std entries must be positive".into()));
        }
        Ok(())
    }

    /// Resized planes `(3, size, size)` with values in `[0, 1]`.
    pub fn resize(&self, image: &RgbImage) -> Result<Tensor> {
        if image.width == 0 || image.height == 0 {
            return Err(Error::ZeroSizeImage);
        }
        let n = self.image_size;
        let plane = image.width * image.height;
        let mut data = Vec::with_capacity(3 * n * n);
        for ch in 0..3 {
            let src: Vec<f32> = (0..plane).map(|i| image.data[i * 3 + ch] as f32 / 255.0).collect();
            if image.width == n && image.height == n {
                data.extend_from_slice(&src);
            } else {
                data.extend(resize_plane(&src, image.width, image.height, n, n));
            }
        }
        Tensor::from_vec(&[3, n, n], data)
    }

    fn normalize(&self, mut x: Tensor) -> Tensor {
        let plane = self.image_size * self.image_size;
        for (ch, chunk) in x.data_mut().chunks_mut(plane).enumerate() {
            let (m, s) = (self.mean[ch], self.std[ch]);
            chunk.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        x
    }

    /// Eval-mode pipeline: resize and normalize.
    pub fn eval(&self, image: &RgbImage) -> Result<Tensor> {
        Ok(self.normalize(self.resize(image)?))
    }

    /// Train-mode pipeline: resize, a dihedral transform drawn from
    /// `seed`, normalize.
    pub fn train(&self, image: &RgbImage, seed: u64) -> Result<Tensor> {
        let t = Dihedral::sample(&mut Rng::seed(seed));
        Ok(self.normalize(t.apply(&self.resize(image)?)))
    }

    /// Dispatches to [`Self::train`] when `augment_seed` is set.
    pub fn apply(&self, image: &RgbImage, augment_seed: Option<u64>) -> Result<Tensor> {
        match augment_seed {
            Some(seed) => self.train(image, seed),
            None => self.eval(image),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(w: usize, h: usize) -> RgbImage {
        let mut data = Vec::new();
        for y in 0..h {
            for x in 0..w {
                data.extend_from_slice(&[(x * 7 % 256) as u8, (y * 5 % 256) as u8, ((x + y) % 256) as u8]);
            }
        }
        RgbImage::new(w, h, data).unwrap()
    }

    fn small_config(n: usize) -> PreprocessConfig {
        PreprocessConfig { image_size: n, ..Default::default() }
    }

    #[test]
    fn output_shape_and_eval_determinism() {
        let cfg = PreprocessConfig::default();
        let x = cfg.eval(&gradient_image(448, 448)).unwrap();
        assert_eq!(x.shape(), &[3, 224, 224]);
        assert_eq!(cfg.apply(&gradient_image(448, 448), None).unwrap(), x);
        assert_eq!(cfg.eval(&gradient_image(50, 30)).unwrap().shape(), &[3, 224, 224]);
    }

    #[test]
    fn zero_size_rejected() {
        assert_eq!(RgbImage::new(0, 4, Vec::new()), Err(Error::ZeroSizeImage));
        let img = RgbImage { width: 0, height: 0, data: Vec::new() };
        assert_eq!(small_config(32).eval(&img), Err(Error::ZeroSizeImage));
    }

    #[test]
    fn resize_of_constant_is_constant_and_identity_is_exact() {
        let src = vec![0.25f32; 12];
        assert!(resize_plane(&src, 4, 3, 9, 7).iter().all(|v| (*v - 0.25).abs() < 1e-7));
        let src: Vec<f32> = (0..20).map(|v| v as f32).collect();
        assert_eq!(resize_plane(&src, 5, 4, 5, 4), src);
        // Halving a linear ramp samples midpoints.
        let ramp: Vec<f32> = (0..4).map(|v| v as f32).collect();
        assert_eq!(resize_plane(&ramp, 4, 1, 2, 1), vec![0.5, 2.5]);
    }

    #[test]
    fn dihedral_group_laws() {
        let r = Dihedral::rotation();
        let mut t = Dihedral::IDENTITY;
        for _ in 0..4 {
            t = r.compose(t);
        }
        assert_eq!(t, Dihedral::IDENTITY);
        let x = Tensor::from_vec(&[2, 5, 5], (0..50).map(|v| v as f32).collect()).unwrap();
        let mut y = x.clone();
        for _ in 0..4 {
            y = r.apply(&y);
        }
        assert_eq!(y, x);
        let all = Dihedral::all();
        for a in all {
            for b in all {
                let ab = a.compose(b);
                assert!(all.contains(&ab));
                assert_eq!(ab.apply(&x), a.apply(&b.apply(&x)), "{a:?} after {b:?}");
            }
        }
        let images: Vec<Tensor> = all.iter().map(|t| t.apply(&x)).collect();
        for i in 0..8 {
            for j in 0..i {
                assert_ne!(images[i], images[j]);
            }
        }
        assert_eq!(Dihedral::horizontal_flip().apply(&x).data()[0], 4.0);
        assert_eq!(Dihedral::vertical_flip().apply(&x).data()[0], 20.0);
    }

    #[test]
    fn train_mode_draws_all_eight_transforms() {
        let cfg = small_config(32);
        let img = gradient_image(32, 32);
        let mut seen = alloc::collections::BTreeSet::new();
        for seed in 0..200 {
            let y = cfg.train(&img, seed).unwrap();
            assert_eq!(y.shape(), &[3, 32, 32]);
            seen.insert(y.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
        assert_eq!(seen.len(), 8);
    }

    #[test]
    fn normalization_uses_config_statistics() {
        let cfg = PreprocessConfig { image_size: 32, mean: [0.5, 0.0, 1.0], std: [0.5, 1.0, 2.0] };
        let img = RgbImage::new(32, 32, vec![255; 32 * 32 * 3]).unwrap();
        let x = cfg.eval(&img).unwrap();
        assert_eq!(x.data()[0], 1.0);
        assert_eq!(x.data()[1024], 1.0);
        assert_eq!(x.data()[2048], 0.0);
    }
}
