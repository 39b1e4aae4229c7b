//! Gradient-weighted class activation maps over the last convolutional
//! feature maps.

use alloc::vec::Vec;

use crate::model::ModelBundle;
use crate::preprocess::resize_plane;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Heatmap at input resolution, row-major, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Heatmap {
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Fraction of the map's total mass inside the half-open pixel box
    /// `[x0, x1) × [y0, y1)`. An all-zero map has no mass anywhere and
    /// returns 0.
    pub fn mass_inside(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let total: f64 = self.data.iter().map(|v| *v as f64).sum();
        if total == 0.0 {
            return 0.0;
        }
        let mut inside = 0.0;
        for y in y0.min(self.height)..y1.min(self.height) {
            for x in x0.min(self.width)..x1.min(self.width) {
                inside += self.at(x, y) as f64;
            }
        }
        inside / total
    }
}

/// Rectified gradient-weighted channel sum of `maps` `(1, C, h, w)`, with
/// channel weights the spatial mean of `grads`. Returned at `h × w`,
/// unnormalized.
pub fn weighted_map(maps: &Tensor, grads: &Tensor) -> Vec<f32> {
    let (_, c, h, w) = maps.dims4();
    let plane = h * w;
    let mut cam = alloc::vec![0.0f64; plane];
    for ch in 0..c {
        let g = &grads.data()[ch * plane..(ch + 1) * plane];
        let alpha = g.iter().map(|v| *v as f64).sum::<f64>() / plane as f64;
        if alpha == 0.0 {
            continue;
        }
        let a = &maps.data()[ch * plane..(ch + 1) * plane];
        for (o, v) in cam.iter_mut().zip(a) {
            *o += alpha * *v as f64;
        }
    }
    cam.into_iter().map(|v| v.max(0.0) as f32).collect()
}

/// GradCAM of `target_class` for one preprocessed `(3, H, W)` image,
/// bilinearly upsampled to `H × W` and divided by its maximum. An all-zero
/// map stays all zero.
pub fn gradcam(bundle: &mut ModelBundle, image: &Tensor, aux: Option<&[f32]>, target_class: usize) -> Result<Heatmap> {
    if target_class >= bundle.num_classes() {
        return Err(Error::TargetOutOfRange { index: target_class, classes: bundle.num_classes() });
    }
    let maps = bundle.feature_maps(image)?;
    if maps.rank() != 4 || maps.shape()[2] * maps.shape()[3] == 0 {
        return Err(Error::DimensionMismatch("backbone has no spatial feature maps".into()));
    }
    let (_, grads) = bundle.class_score_gradient(&maps, aux, target_class)?;
    let (_, _, h, w) = maps.dims4();
    let cam = weighted_map(&maps, &grads);
    let (height, width) = (image.shape()[1], image.shape()[2]);
    let mut data = resize_plane(&cam, w, h, width, height);
    let max = data.iter().copied().fold(0.0f32, f32::max);
    if max > 0.0 {
        data.iter_mut().for_each(|v| *v = (*v / max).clamp(0.0, 1.0));
    } else {
        data.iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(Heatmap { width, height, data })
}
