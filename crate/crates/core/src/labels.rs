//! Elevation pseudo-labels for datasets without elevation ground truth.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{DatasetManifest, ImageRecord, Modality};
use crate::model::{ModelBundle, Role};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Tolerance on `|Σ probs − 1|`.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct ElevationPrediction {
    pub image_id: String,
    pub probs: Vec<f64>,
    pub argmax_class: String,
    pub source_model: String,
    pub source_modality: Modality,
}

/// Lowest index attaining the maximum.
pub fn argmax_index(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in probs.iter().enumerate() {
        if *v > probs[best] {
            best = i;
        }
    }
    best
}

pub fn check_simplex(probs: &[f64]) -> Result<()> {
    let sum: f64 = probs.iter().sum();
    if probs.iter().any(|p| !(*p >= 0.0)) || !((sum - 1.0).abs() <= SIMPLEX_TOLERANCE) {
        return Err(Error::NotAProbability(sum));
    }
    Ok(())
}

impl ElevationPrediction {
    /// Builds a prediction, deriving `argmax_class` from `classes`.
    pub fn new(
        image_id: String,
        probs: Vec<f64>,
        classes: &[String],
        source_model: String,
        source_modality: Modality,
    ) -> Result<Self> {
        if probs.len() != classes.len() {
            return Err(Error::LengthMismatch(probs.len(), classes.len()));
        }
        check_simplex(&probs)?;
        let argmax_class = classes[argmax_index(&probs)].clone();
        Ok(Self { image_id, probs, argmax_class, source_model, source_modality })
    }

    pub fn argmax(&self) -> usize {
        argmax_index(&self.probs)
    }

    /// Checks the simplex invariant and that `argmax_class` agrees with
    /// `probs` under `classes`.
    pub fn validate(&self, classes: &[String]) -> Result<()> {
        if self.probs.len() != classes.len() {
            return Err(Error::LengthMismatch(self.probs.len(), classes.len()));
        }
        check_simplex(&self.probs)?;
        let want = &classes[self.argmax()];
        if *want != self.argmax_class {
            return Err(Error::InvalidArgument(alloc::format!(
                "{}: argmax column says {:?}, probabilities say {:?}",
                self.image_id,
                self.argmax_class,
                want
            )));
        }
        Ok(())
    }
}

/// How a pseudo-label enters a fused diagnosis model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuxMode {
    /// The probability vector as is.
    Soft,
    /// One-hot of the argmax.
    Discrete,
}

impl AuxMode {
    pub fn vector(self, probs: &[f64]) -> Vec<f32> {
        match self {
            AuxMode::Soft => probs.iter().map(|p| *p as f32).collect(),
            AuxMode::Discrete => crate::model::one_hot(argmax_index(probs), probs.len()),
        }
    }
}

/// Refuses to label `manifest` with a model trained on another modality
/// unless `allow_mismatch` is set. Mixed-modality manifests always conflict
/// with a model that has a recorded modality.
pub fn check_modality(bundle: &ModelBundle, manifest: &DatasetManifest, allow_mismatch: bool) -> Result<()> {
    let Some(model) = bundle.modality() else { return Ok(()) };
    if allow_mismatch {
        return Ok(());
    }
    match manifest.records().iter().find(|r| r.modality != model) {
        Some(r) => Err(Error::ModalityMismatch { model: model.name(), data: r.modality.name() }),
        None => Ok(()),
    }
}

/// Runs the elevation model over every record in manifest order. `load`
/// returns the eval-mode preprocessed `(3, H, W)` tensor for a record.
/// Inference runs in batches of `batch_size`, which does not change the
/// output.
pub fn infer_elevations(
    bundle: &ModelBundle,
    manifest: &DatasetManifest,
    source_model: &str,
    allow_mismatch: bool,
    batch_size: usize,
    mut load: impl FnMut(&ImageRecord) -> Result<Tensor>,
) -> Result<Vec<ElevationPrediction>> {
    if bundle.role() != Role::Elevation {
        return Err(Error::WrongRole { expected: Role::Elevation.name(), actual: bundle.role().name() });
    }
    check_modality(bundle, manifest, allow_mismatch)?;
    let classes = &manifest.schema.elevation_classes;
    if classes.len() != bundle.num_classes() {
        return Err(Error::DimensionMismatch(alloc::format!(
            "model predicts {} elevation classes, schema has {}",
            bundle.num_classes(),
            classes.len()
        )));
    }
    let source_modality = bundle.modality().or(manifest.modality()).unwrap_or(Modality::Dermoscopic);
    let mut out = Vec::with_capacity(manifest.len());
    for chunk in manifest.records().chunks(batch_size.max(1)) {
        let images = chunk.iter().map(&mut load).collect::<Result<Vec<_>>>()?;
        let probs = bundle.forward_elevation_batch(&images)?;
        for (r, p) in chunk.iter().zip(probs) {
            let p: Vec<f64> = p.iter().map(|v| *v as f64).collect();
            out.push(ElevationPrediction::new(r.image_id.clone(), p, classes, source_model.into(), source_modality)?);
        }
    }
    Ok(out)
}

/// Aux vectors keyed by image id for every record of `manifest`.
pub fn attach_labels(
    manifest: &DatasetManifest,
    predictions: &[ElevationPrediction],
    mode: AuxMode,
) -> Result<BTreeMap<String, Vec<f32>>> {
    let by_id: BTreeMap<&str, &ElevationPrediction> = predictions.iter().map(|p| (p.image_id.as_str(), p)).collect();
    let mut out = BTreeMap::new();
    for r in manifest.records() {
        let p = by_id
            .get(r.image_id.as_str())
            .ok_or_else(|| Error::MissingLabel { image_id: r.image_id.clone(), column: "elevation pseudo-label" })?;
        check_simplex(&p.probs)?;
        out.insert(r.image_id.clone(), mode.vector(&p.probs));
    }
    Ok(out)
}

/// Ground-truth one-hot elevation vectors keyed by image id.
pub fn ground_truth_aux(manifest: &DatasetManifest) -> Result<BTreeMap<String, Vec<f32>>> {
    let n = manifest.schema.num_elevation();
    manifest
        .records()
        .iter()
        .map(|r| {
            let e = r.require_label(crate::data::LabelKind::Elevation)?;
            Ok((r.image_id.clone(), crate::model::one_hot(e, n)))
        })
        .collect()
}
