//! Image decoding and heatmap overlays.

use std::path::Path;

use lesionelev_core::gradcam::Heatmap;
use lesionelev_core::preprocess::RgbImage;

use crate::error::{Result, ToolError};

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| ToolError::Data(format!("{}: {e}", path.display())))?.to_rgb8();
    let (w, h) = img.dimensions();
    RgbImage::new(w as usize, h as usize, img.into_raw()).map_err(|e| ToolError::Data(format!("{}: {e}", path.display())))
}

pub fn save_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    image::save_buffer(path, &img.data, img.width as u32, img.height as u32, image::ExtendedColorType::Rgb8)
        .map_err(|e| ToolError::write(path, e))
}

/// Jet-like colormap on `[0, 1]`.
fn colormap(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    let ramp = |x: f32| (1.5 - (4.0 * v - x).abs()).clamp(0.0, 1.0);
    [ramp(3.0), ramp(2.0), ramp(1.0)]
}

/// Blends a colored heatmap over the image resized to the heatmap's
/// resolution. `alpha` weights the heatmap.
pub fn overlay(base: &RgbImage, cam: &Heatmap, alpha: f32) -> RgbImage {
    let (w, h) = (cam.width, cam.height);
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let px = base.pixel(x * base.width / w, y * base.height / h);
            let c = colormap(cam.at(x, y));
            for ch in 0..3 {
                let v = (1.0 - alpha) * px[ch] as f32 + alpha * 255.0 * c[ch];
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RgbImage { width: w, height: h, data }
}
