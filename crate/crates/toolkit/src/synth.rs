//! Synthetic lesion images with known elevation shapes, for smoke tests and
//! end-to-end checks without clinical data.
//!
//! Elevation classes are drawn as a flat disk, a disk with a raised bright
//! rim, and a disk with a bright central nodule. Half of the images may
//! carry a stripe texture; in diagnosis sets an image is malignant when
//! `elevation + texture ≥ 2`, with a fraction of labels flipped.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use lesionelev_core::data::{DatasetManifest, DiagnosisLabel, ElevationLabel, ImageRecord, LabelSchema, Modality};
use lesionelev_core::preprocess::RgbImage;
use lesionelev_core::rng::Rng;

use crate::dataset::{schema_to_string, write_manifest};
use crate::error::{Result, ToolError};
use crate::imageio::save_rgb;

pub const ELEVATION_CLASSES: [&str; 3] = ["flat", "palpable", "nodular"];
pub const DIAGNOSIS_CLASSES: [&str; 2] = ["benign", "malignant"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    /// Stripe texture on every other triple of images.
    pub textures: bool,
    /// Add diagnosis labels.
    pub diagnosis: bool,
    /// Fraction of diagnosis labels flipped.
    pub label_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { count: 600, size: 64, seed: 0, textures: true, diagnosis: false, label_noise: 0.1 }
    }
}

/// Half-open pixel box `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    /// The box in a `to × to` rescaling of a `from × from` image, rounded
    /// outward.
    pub fn scaled(self, from: usize, to: usize) -> BBox {
        let s = to as f64 / from as f64;
        BBox {
            x0: (self.x0 as f64 * s).floor() as usize,
            y0: (self.y0 as f64 * s).floor() as usize,
            x1: ((self.x1 as f64 * s).ceil() as usize).min(to),
            y1: ((self.y1 as f64 * s).ceil() as usize).min(to),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthImage {
    pub id: String,
    pub image: RgbImage,
    pub elevation: usize,
    pub textured: bool,
    pub diagnosis: Option<usize>,
    pub bbox: BBox,
}

pub fn schema() -> LabelSchema {
    let d: Vec<String> = DIAGNOSIS_CLASSES.map(String::from).to_vec();
    let grouping: BTreeMap<String, String> = d.iter().map(|c| (c.clone(), c.clone())).collect();
    LabelSchema::new(d, ELEVATION_CLASSES.map(String::from).to_vec(), grouping).expect("valid schema")
}

/// Draws one image of elevation class `elevation`.
pub fn render(rng: &mut Rng, size: usize, elevation: usize, textured: bool) -> (RgbImage, BBox) {
    let n = size as f32;
    let r = rng.uniform_f32(0.22, 0.34) * n;
    let margin = r + 2.0;
    let cx = rng.uniform_f32(margin, n - margin);
    let cy = rng.uniform_f32(margin, n - margin);
    let jitter = |rng: &mut Rng, c: [f32; 3], a: f32| {
        let d = rng.uniform_f32(-a, a);
        c.map(|v| v + d + rng.uniform_f32(-a / 3.0, a / 3.0))
    };
    let skin = jitter(rng, [215.0, 175.0, 155.0], 15.0);
    let lesion = jitter(rng, [125.0, 80.0, 60.0], 20.0);
    let phase = rng.uniform_f32(0.0, 6.0);
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
            let d = (dx * dx + dy * dy).sqrt();
            // Soft one-pixel boundary.
            let inside = (r + 0.5 - d).clamp(0.0, 1.0);
            let mut boost = match elevation {
                0 => 0.0,
                1 => {
                    let t = d / r;
                    if (0.68..=1.0).contains(&t) {
                        75.0
                    } else {
                        0.0
                    }
                }
                _ => 95.0 * (-(d / (0.45 * r)).powi(2)).exp(),
            };
            if textured && (x as f32 + y as f32 + phase).rem_euclid(6.0) < 2.0 {
                boost -= 45.0;
            }
            for ch in 0..3 {
                let v = skin[ch] * (1.0 - inside) + (lesion[ch] + boost) * inside + rng.uniform_f32(-20.0, 20.0);
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    let bbox = BBox {
        x0: (cx - r).floor().max(0.0) as usize,
        y0: (cy - r).floor().max(0.0) as usize,
        x1: ((cx + r).ceil() as usize + 1).min(size),
        y1: ((cy + r).ceil() as usize + 1).min(size),
    };
    (RgbImage { width: size, height: size, data }, bbox)
}

/// Generates a balanced set: image `i` has elevation `i mod 3` and, when
/// textures are on, texture `(i / 3) mod 2`, so every (elevation, texture)
/// cell has the same size up to one.
pub fn generate(cfg: &SynthConfig) -> Vec<SynthImage> {
    let mut rng = Rng::seed(cfg.seed);
    (0..cfg.count)
        .map(|i| {
            let elevation = i % 3;
            let textured = cfg.textures && (i / 3) % 2 == 1;
            let (image, bbox) = render(&mut rng, cfg.size, elevation, textured);
            let diagnosis = cfg.diagnosis.then(|| {
                let malignant = elevation + textured as usize >= 2;
                (malignant ^ rng.bernoulli(cfg.label_noise)) as usize
            });
            SynthImage { id: format!("syn{i:05}"), image, elevation, textured, diagnosis, bbox }
        })
        .collect()
}

/// Writes `images/<id>.png`, `manifest.csv` and `schema.toml` under `dir`.
/// Diagnosis labels are only written for diagnosis sets; elevation labels
/// are written unless `with_elevation` is false.
pub fn write_dataset(dir: &Path, images: &[SynthImage], with_elevation: bool) -> Result<DatasetManifest> {
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| ToolError::write(&img_dir, e))?;
    let mut records = Vec::with_capacity(images.len());
    for s in images {
        let rel = format!("images/{}.png", s.id);
        save_rgb(&dir.join(&rel), &s.image)?;
        records.push(ImageRecord {
            image_id: s.id.clone(),
            image_path: rel,
            modality: Modality::Dermoscopic,
            diagnosis: s.diagnosis.map(DiagnosisLabel),
            elevation: with_elevation.then_some(ElevationLabel(s.elevation)),
        });
    }
    let manifest = DatasetManifest::new("synthetic", schema(), records)?;
    write_manifest(&dir.join("manifest.csv"), &manifest)?;
    let schema_file = dir.join("schema.toml");
    fs::write(&schema_file, schema_to_string(&manifest.schema)).map_err(|e| ToolError::write(&schema_file, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let cfg = SynthConfig { count: 12, size: 32, seed: 3, textures: true, diagnosis: true, label_noise: 0.0 };
        let a = generate(&cfg);
        let b = generate(&cfg);
        assert_eq!(a.iter().map(|s| &s.image).collect::<Vec<_>>(), b.iter().map(|s| &s.image).collect::<Vec<_>>());
        for s in &a {
            let want = (s.elevation + s.textured as usize >= 2) as usize;
            assert_eq!(s.diagnosis, Some(want));
        }
        assert_eq!(a.iter().filter(|s| s.elevation == 2).count(), 4);
        assert_eq!(a.iter().filter(|s| s.textured).count(), 6);
    }

    #[test]
    fn lesion_lies_in_its_box() {
        let mut rng = Rng::seed(1);
        for e in 0..3 {
            let (img, bb) = render(&mut rng, 64, e, false);
            let dark = |x: usize, y: usize| {
                let p = img.pixel(x, y);
                (p[0] as i32 + p[1] as i32 + p[2] as i32) < 3 * 110
            };
            let mut outside_dark = 0;
            for y in 0..64 {
                for x in 0..64 {
                    let inside = (bb.x0..bb.x1).contains(&x) && (bb.y0..bb.y1).contains(&y);
                    if !inside && dark(x, y) {
                        outside_dark += 1;
                    }
                }
            }
            assert_eq!(outside_dark, 0, "class {e}");
        }
        let bb = BBox { x0: 1, y0: 2, x1: 3, y1: 64 };
        assert_eq!(bb.scaled(64, 224), BBox { x0: 3, y0: 7, x1: 11, y1: 224 });
    }

    #[test]
    fn written_dataset_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = generate(&SynthConfig { count: 6, size: 32, seed: 0, textures: true, diagnosis: true, label_noise: 0.1 });
        let m = write_dataset(dir.path(), &imgs, false).unwrap();
        let schema = crate::dataset::load_schema(&dir.path().join("schema.toml")).unwrap();
        let back = crate::dataset::load_manifest(&dir.path().join("manifest.csv"), &schema).unwrap();
        assert_eq!(back.len(), 6);
        assert!(back.records().iter().all(|r| r.elevation.is_none()));
        assert_eq!(back.records()[0].diagnosis, m.records()[0].diagnosis);
        assert!(Path::new(&back.records()[0].image_path).exists());
    }
}
