//! Model bundles: a backbone feature extractor followed by global average
//! pooling, the fusion operator and a single linear classifier.
//!
//! Fusion concatenates the auxiliary elevation vector to the pooled feature
//! vector right before the classifier, so a fused head has exactly
//! `aux_dim × num_classes` more weights than the plain head and no extra
//! bias terms.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::backbone::{BackboneFamily, BackboneSpec};
use crate::data::{LabelKind, Modality};
use crate::nn::pool::{global_avg_pool, global_avg_pool_backward};
use crate::nn::{Act, Activation, Layer, Linear, Param, Sequential};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FusionMode {
    /// Image only.
    None,
    /// One-hot ground-truth elevation.
    GtOnehot,
    /// Predicted elevation probabilities, verbatim.
    Soft,
    /// One-hot of the predicted elevation argmax.
    DiscreteOnehot,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [FusionMode::None, FusionMode::GtOnehot, FusionMode::Soft, FusionMode::DiscreteOnehot];

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::None => "none",
            FusionMode::GtOnehot => "gt_onehot",
            FusionMode::Soft => "soft",
            FusionMode::DiscreteOnehot => "discrete_onehot",
        }
    }

    pub fn uses_aux(self) -> bool {
        self != FusionMode::None
    }

    pub fn requires_onehot(self) -> bool {
        matches!(self, FusionMode::GtOnehot | FusionMode::DiscreteOnehot)
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidFusion(format!("unknown fusion mode {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FusionHead {
    pub feature_dim: usize,
    pub aux_dim: usize,
    pub num_classes: usize,
    pub mode: FusionMode,
}

impl FusionHead {
    pub fn new(feature_dim: usize, aux_dim: usize, num_classes: usize, mode: FusionMode) -> Result<Self> {
        let head = Self { feature_dim, aux_dim, num_classes, mode };
        head.validate()?;
        Ok(head)
    }

    /// A head without fusion for `spec`.
    pub fn plain(spec: &BackboneSpec) -> Self {
        Self { feature_dim: spec.feature_dim, aux_dim: 0, num_classes: spec.num_classes, mode: FusionMode::None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.num_classes == 0 {
            return Err(Error::InvalidFusion("feature_dim and num_classes must be positive".to_string()));
        }
        if self.mode.uses_aux() && self.aux_dim == 0 {
            return Err(Error::InvalidFusion(format!("mode {} needs aux_dim > 0", self.mode)));
        }
        Ok(())
    }

    /// Width of the classifier input.
    pub fn classifier_input(&self) -> usize {
        if self.mode.uses_aux() {
            self.feature_dim + self.aux_dim
        } else {
            self.feature_dim
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Role {
    /// Elevation predictor.
    Elevation,
    /// Diagnosis classifier, with or without fused elevation.
    Diagnosis,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Elevation => "elevation",
            Role::Diagnosis => "diagnosis",
        }
    }

    /// The label column this role predicts.
    pub fn target(self) -> LabelKind {
        match self {
            Role::Elevation => LabelKind::Elevation,
            Role::Diagnosis => LabelKind::Diagnosis,
        }
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "elevation" => Ok(Role::Elevation),
            "diagnosis" => Ok(Role::Diagnosis),
            other => Err(Error::InvalidArgument(format!("unknown role {other:?}"))),
        }
    }
}

struct HeadCache {
    height: usize,
    width: usize,
}

pub struct ModelBundle {
    spec: Option<BackboneSpec>,
    fusion: FusionHead,
    role: Role,
    modality: Option<Modality>,
    features: Sequential,
    neck: Option<Sequential>,
    classifier: Linear,
    cache: Option<HeadCache>,
}

/// Smallest spatial input the zoo accepts (five stride-2 stages).
pub const MIN_INPUT_SIZE: usize = 32;

/// Builds a randomly initialized model. The classifier gets zero bias and
/// weights uniform in `±1/sqrt(fan_in)`.
pub fn build_model(spec: &BackboneSpec, fusion: FusionHead, role: Role, seed: u64) -> Result<ModelBundle> {
    spec.validate()?;
    fusion.validate()?;
    if fusion.feature_dim != spec.feature_dim {
        return Err(Error::DimensionMismatch(format!(
            "fusion head expects {} features, backbone produces {}",
            fusion.feature_dim, spec.feature_dim
        )));
    }
    if fusion.num_classes != spec.num_classes {
        return Err(Error::DimensionMismatch(format!(
            "fusion head has {} classes, backbone spec {}",
            fusion.num_classes, spec.num_classes
        )));
    }
    let mut rng = Rng::seed(seed);
    let features = spec.build_features(&mut rng)?;
    let neck = (spec.family == BackboneFamily::MobilenetV3Large).then(|| {
        Sequential::new().with(Linear::new(960, 1280, &mut rng)).with(Act::new(Activation::Hardswish))
    });
    let mut bundle = ModelBundle::from_parts(features, neck, fusion, role, &mut rng)?;
    bundle.spec = Some(spec.clone());
    Ok(bundle)
}

impl ModelBundle {
    /// Assembles a model around a caller-supplied feature extractor, which
    /// must output `(N, C, h, w)` maps. `neck` (if any) maps pooled `C`
    /// features to `fusion.feature_dim`.
    pub fn from_parts(
        features: Sequential,
        neck: Option<Sequential>,
        fusion: FusionHead,
        role: Role,
        rng: &mut Rng,
    ) -> Result<Self> {
        fusion.validate()?;
        if role == Role::Elevation && fusion.mode.uses_aux() {
            return Err(Error::InvalidFusion("elevation models take no auxiliary input".to_string()));
        }
        let classifier = Linear::new(fusion.classifier_input(), fusion.num_classes, rng);
        Ok(Self { spec: None, fusion, role, modality: None, features, neck, classifier, cache: None })
    }

    pub fn spec(&self) -> Option<&BackboneSpec> {
        self.spec.as_ref()
    }

    pub fn fusion(&self) -> &FusionHead {
        &self.fusion
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn num_classes(&self) -> usize {
        self.fusion.num_classes
    }

    /// Image modality the model was trained on.
    pub fn modality(&self) -> Option<Modality> {
        self.modality
    }

    pub fn set_modality(&mut self, modality: Option<Modality>) {
        self.modality = modality;
    }

    pub fn classifier(&self) -> &Linear {
        &self.classifier
    }

    pub fn classifier_mut(&mut self) -> &mut Linear {
        &mut self.classifier
    }

    /// Trainable scalars in the final linear classifier.
    pub fn classifier_param_count(&self) -> usize {
        self.classifier.param_count()
    }

    /// Trainable scalars in the whole model.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| {
            if p.is_trainable() {
                n += p.value.len()
            }
        });
        n
    }

    /// Every parameter and buffer, in a fixed order: features, neck, classifier.
    pub fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.features.visit_params(f);
        if let Some(neck) = &self.neck {
            neck.visit_params(f);
        }
        self.classifier.visit_params(f);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.features.visit_params_mut(f);
        if let Some(neck) = &mut self.neck {
            neck.visit_params_mut(f);
        }
        self.classifier.visit_params_mut(f);
    }

    /// Parameters of the feature extractor (and neck) only.
    pub fn visit_feature_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.features.visit_params_mut(f);
        if let Some(neck) = &mut self.neck {
            neck.visit_params_mut(f);
        }
    }

    /// Copies of every parameter slot (weights and buffers) in visiting
    /// order.
    pub fn state(&self) -> Vec<Vec<f32>> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.push(p.value.clone()));
        out
    }

    /// Restores slots captured by [`Self::state`] from an identically
    /// shaped model.
    pub fn load_state(&mut self, state: &[Vec<f32>]) -> Result<()> {
        let mut shapes = Vec::new();
        self.visit_params(&mut |p| shapes.push(p.value.len()));
        if shapes.len() != state.len() || shapes.iter().zip(state).any(|(n, s)| *n != s.len()) {
            return Err(Error::DimensionMismatch(format!(
                "state has {} slots, model has {}, or slot sizes differ",
                state.len(),
                shapes.len()
            )));
        }
        let mut i = 0;
        self.visit_params_mut(&mut |p| {
            p.value.copy_from_slice(&state[i]);
            i += 1;
        });
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |p| p.grad.iter_mut().for_each(|g| *g = 0.0));
    }

    pub fn clear_cache(&mut self) {
        self.features.clear_cache();
        if let Some(neck) = &mut self.neck {
            neck.clear_cache();
        }
        self.classifier.clear_cache();
        self.cache = None;
    }

    /// Checks one aux vector against the fusion mode.
    pub fn check_aux(&self, aux: Option<&[f32]>) -> Result<()> {
        match (self.fusion.mode.uses_aux(), aux) {
            (false, None) => Ok(()),
            (false, Some(_)) => Err(Error::AuxUnexpected),
            (true, None) => Err(Error::AuxMissing(self.fusion.mode.name())),
            (true, Some(a)) => {
                if a.len() != self.fusion.aux_dim {
                    return Err(Error::DimensionMismatch(format!(
                        "aux has {} entries, head expects {}",
                        a.len(),
                        self.fusion.aux_dim
                    )));
                }
                if a.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::AuxOutOfRange);
                }
                if self.fusion.mode.requires_onehot() {
                    let ones = a.iter().filter(|v| **v == 1.0).count();
                    let zeros = a.iter().filter(|v| **v == 0.0).count();
                    if ones != 1 || zeros != a.len() - 1 {
                        return Err(Error::AuxNotOneHot);
                    }
                }
                Ok(())
            }
        }
    }

    fn check_batch(&self, images: &Tensor, aux: Option<&Tensor>) -> Result<usize> {
        let shape = images.shape();
        if shape.len() != 4 || shape[1] != 3 || shape[2] < MIN_INPUT_SIZE || shape[3] < MIN_INPUT_SIZE {
            return Err(Error::ShapeMismatch {
                expected: format!("(N, 3, H >= {MIN_INPUT_SIZE}, W >= {MIN_INPUT_SIZE})"),
                got: format!("{shape:?}"),
            });
        }
        let n = shape[0];
        match aux {
            None => self.check_aux(None)?,
            Some(a) => {
                if a.shape().first() != Some(&n) {
                    return Err(Error::LengthMismatch(n, a.shape().first().copied().unwrap_or(0)));
                }
                for row in a.data().chunks(a.len() / n.max(1)) {
                    self.check_aux(Some(row))?;
                }
            }
        }
        Ok(n)
    }

    fn fuse(&self, pooled: Tensor, aux: Option<&Tensor>) -> Tensor {
        let Some(aux) = aux else { return pooled };
        let n = pooled.shape()[0];
        let (fd, ad) = (self.fusion.feature_dim, self.fusion.aux_dim);
        let mut z = Vec::with_capacity(n * (fd + ad));
        for i in 0..n {
            z.extend_from_slice(&pooled.data()[i * fd..(i + 1) * fd]);
            z.extend_from_slice(&aux.data()[i * ad..(i + 1) * ad]);
        }
        Tensor::from_vec(&[n, fd + ad], z).unwrap()
    }

    fn pooled_width_check(&self, pooled: &Tensor) -> Result<()> {
        if pooled.shape()[1] != self.fusion.feature_dim {
            return Err(Error::DimensionMismatch(format!(
                "feature extractor produced {} features, head expects {}",
                pooled.shape()[1],
                self.fusion.feature_dim
            )));
        }
        Ok(())
    }

    /// Training-mode logits `(N, num_classes)`; caches for [`Self::backward`].
    pub fn forward_train(&mut self, images: Tensor, aux: Option<&Tensor>) -> Result<Tensor> {
        let n = self.check_batch(&images, aux)?;
        let maps = self.features.forward(images);
        let (_, c, h, w) = maps.dims4();
        let mut pooled = global_avg_pool(&maps).reshape(&[n, c])?;
        if let Some(neck) = &mut self.neck {
            pooled = neck.forward(pooled);
        }
        self.pooled_width_check(&pooled)?;
        let z = self.fuse(pooled, aux);
        self.cache = Some(HeadCache { height: h, width: w });
        Ok(self.classifier.forward(z))
    }

    /// Backpropagates dLoss/dLogits through the whole model, accumulating
    /// parameter gradients. Returns dLoss/dAux when the head fuses aux input.
    pub fn backward(&mut self, dlogits: Tensor) -> Option<Tensor> {
        let HeadCache { height, width } = self.cache.take().expect("ModelBundle::backward without forward_train");
        let dz = self.classifier.backward(dlogits);
        let n = dz.shape()[0];
        let (dpooled, daux) = self.split_fused(dz, n);
        let mut dpooled = dpooled;
        if let Some(neck) = &mut self.neck {
            dpooled = neck.backward(dpooled);
        }
        let c = dpooled.len() / n;
        let dmaps = global_avg_pool_backward(&dpooled.reshape(&[n, c, 1, 1]).unwrap(), height, width);
        self.features.backward(dmaps);
        daux
    }

    fn split_fused(&self, dz: Tensor, n: usize) -> (Tensor, Option<Tensor>) {
        if !self.fusion.mode.uses_aux() {
            return (dz, None);
        }
        let (fd, ad) = (self.fusion.feature_dim, self.fusion.aux_dim);
        let mut dp = Vec::with_capacity(n * fd);
        let mut da = Vec::with_capacity(n * ad);
        for row in dz.data().chunks(fd + ad) {
            dp.extend_from_slice(&row[..fd]);
            da.extend_from_slice(&row[fd..]);
        }
        (Tensor::from_vec(&[n, fd], dp).unwrap(), Some(Tensor::from_vec(&[n, ad], da).unwrap()))
    }

    /// Evaluation-mode logits `(N, num_classes)`.
    pub fn logits(&self, images: &Tensor, aux: Option<&Tensor>) -> Result<Tensor> {
        let n = self.check_batch(images, aux)?;
        let maps = self.features.infer(images);
        if maps.rank() != 4 {
            return Err(Error::DimensionMismatch("feature extractor must output (N, C, h, w)".to_string()));
        }
        let c = maps.shape()[1];
        let mut pooled = global_avg_pool(&maps).reshape(&[n, c])?;
        if let Some(neck) = &self.neck {
            pooled = neck.infer(&pooled);
        }
        self.pooled_width_check(&pooled)?;
        Ok(self.classifier.infer(&self.fuse(pooled, aux)))
    }

    /// Evaluation-mode class probabilities, one row per image.
    pub fn predict_batch(&self, images: &Tensor, aux: Option<&Tensor>) -> Result<Vec<Vec<f32>>> {
        let logits = self.logits(images, aux)?;
        Ok(logits.data().chunks(self.num_classes()).map(softmax).collect())
    }

    fn require_role(&self, role: Role) -> Result<()> {
        if self.role != role {
            return Err(Error::WrongRole { expected: role.name(), actual: self.role.name() });
        }
        Ok(())
    }

    /// Elevation probabilities for one preprocessed `(3, H, W)` image.
    pub fn forward_elevation(&self, image: &Tensor) -> Result<Vec<f32>> {
        self.require_role(Role::Elevation)?;
        let batch = single(image)?;
        Ok(self.predict_batch(&batch, None)?.remove(0))
    }

    /// Elevation probabilities for a batch of `(3, H, W)` images.
    pub fn forward_elevation_batch(&self, images: &[Tensor]) -> Result<Vec<Vec<f32>>> {
        self.require_role(Role::Elevation)?;
        self.predict_batch(&Tensor::stack(images)?, None)
    }

    /// Diagnosis probabilities for one preprocessed image, fusing `aux` when
    /// the head was built with fusion.
    pub fn forward_diagnosis(&self, image: &Tensor, aux: Option<&[f32]>) -> Result<Vec<f32>> {
        self.require_role(Role::Diagnosis)?;
        let batch = single(image)?;
        let aux = aux.map(|a| Tensor::from_vec(&[1, a.len()], a.to_vec())).transpose()?;
        Ok(self.predict_batch(&batch, aux.as_ref())?.remove(0))
    }

    /// Spatial feature maps `(1, C, h, w)` of the last convolutional stage.
    pub fn feature_maps(&self, image: &Tensor) -> Result<Tensor> {
        let batch = single(image)?;
        self.check_batch(&batch, None).or_else(|e| match e {
            Error::AuxMissing(_) => Ok(1),
            other => Err(other),
        })?;
        Ok(self.features.infer(&batch))
    }

    /// Logit of `class` for given feature maps, and its gradient with respect
    /// to the maps. Needs `&mut` because the neck (if any) is differentiated
    /// through its training path, which is identical to inference for the
    /// layers a neck may contain.
    pub fn class_score_gradient(&mut self, maps: &Tensor, aux: Option<&[f32]>, class: usize) -> Result<(f32, Tensor)> {
        if class >= self.num_classes() {
            return Err(Error::TargetOutOfRange { index: class, classes: self.num_classes() });
        }
        self.check_aux(aux)?;
        if maps.rank() != 4 || maps.shape()[0] != 1 {
            return Err(Error::DimensionMismatch("expected (1, C, h, w) feature maps".to_string()));
        }
        let (_, c, h, w) = maps.dims4();
        let mut pooled = global_avg_pool(maps).reshape(&[1, c])?;
        if let Some(neck) = &mut self.neck {
            pooled = neck.forward(pooled);
        }
        self.pooled_width_check(&pooled)?;
        let aux_t = aux.map(|a| Tensor::from_vec(&[1, a.len()], a.to_vec())).transpose()?;
        let z = self.fuse(pooled, aux_t.as_ref());
        let width = self.fusion.classifier_input();
        let logits = self.classifier.infer(&z);
        let row = &self.classifier.weight()[class * width..(class + 1) * width];
        let mut dpooled = Tensor::from_vec(&[1, self.fusion.feature_dim], row[..self.fusion.feature_dim].to_vec())?;
        if let Some(neck) = &mut self.neck {
            dpooled = neck.backward(dpooled);
        }
        let dmaps = global_avg_pool_backward(&dpooled.reshape(&[1, c, 1, 1])?, h, w);
        Ok((logits.data()[class], dmaps))
    }
}

fn single(image: &Tensor) -> Result<Tensor> {
    if image.rank() != 3 {
        return Err(Error::ShapeMismatch { expected: "(3, H, W)".to_string(), got: format!("{:?}", image.shape()) });
    }
    let mut shape = Vec::with_capacity(4);
    shape.push(1);
    shape.extend_from_slice(image.shape());
    image.clone().reshape(&shape)
}

/// Normalized exponential, computed in `f64` with max subtraction.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&z| libm::exp(z as f64 - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| (e / sum) as f32).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// One-hot vector of length `n` with a 1 at `index`.
pub fn one_hot(index: usize, n: usize) -> Vec<f32> {
    let mut v = alloc::vec![0.0; n];
    v[index] = 1.0;
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Conv2d;
    use alloc::vec;

    fn toy_features(rng: &mut Rng) -> Sequential {
        Sequential::new()
            .with(Conv2d::new(3, 4, 3, 2, 1, 1, true, rng))
            .with(Act::new(Activation::Relu))
    }

    fn toy(mode: FusionMode, role: Role) -> ModelBundle {
        let mut rng = Rng::seed(11);
        let head = FusionHead::new(4, 3, if role == Role::Elevation { 3 } else { 5 }, mode).unwrap();
        ModelBundle::from_parts(toy_features(&mut rng), None, head, role, &mut rng).unwrap()
    }

    fn image(seed: u64) -> Tensor {
        let mut rng = Rng::seed(seed);
        Tensor::from_vec(&[3, 32, 32], (0..3 * 32 * 32).map(|_| rng.uniform_f32(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn vgg_head_widths_with_and_without_fusion() {
        let spec = BackboneSpec::new(BackboneFamily::Vgg16Gap, 3);
        let plain = FusionHead::plain(&spec);
        assert_eq!(plain.classifier_input(), 512);
        let spec5 = BackboneSpec::new(BackboneFamily::Vgg16Gap, 5);
        let fused = FusionHead::new(512, 3, 5, FusionMode::GtOnehot).unwrap();
        assert_eq!(fused.classifier_input(), 515);
        let a = build_model(&spec5, FusionHead::plain(&spec5), Role::Diagnosis, 0).unwrap();
        let b = build_model(&spec5, fused, Role::Diagnosis, 0).unwrap();
        assert_eq!(b.classifier_param_count() - a.classifier_param_count(), 15);
        assert_eq!(b.classifier().in_features(), 515);
    }

    #[test]
    fn fusion_needs_aux_dim() {
        assert!(matches!(FusionHead::new(512, 0, 5, FusionMode::Soft), Err(Error::InvalidFusion(_))));
    }

    #[test]
    fn build_model_checks_dimensions() {
        let spec = BackboneSpec::new(BackboneFamily::Resnet18, 5);
        let head = FusionHead::new(256, 3, 5, FusionMode::Soft).unwrap();
        assert!(matches!(build_model(&spec, head, Role::Diagnosis, 0), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn elevation_probabilities_are_a_simplex_and_batch_consistent() {
        let m = toy(FusionMode::None, Role::Elevation);
        let imgs: Vec<Tensor> = (0..4).map(image).collect();
        let batch = m.forward_elevation_batch(&imgs).unwrap();
        for (img, row) in imgs.iter().zip(&batch) {
            let single = m.forward_elevation(img).unwrap();
            assert_eq!(&single, row);
            assert!(single.iter().all(|p| *p >= 0.0));
            assert!((single.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn role_and_shape_errors() {
        let m = toy(FusionMode::None, Role::Elevation);
        assert!(matches!(m.forward_diagnosis(&image(0), None), Err(Error::WrongRole { .. })));
        let bad = Tensor::zeros(&[1, 32, 32]);
        assert!(matches!(m.forward_elevation(&bad), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn aux_contract() {
        let none = toy(FusionMode::None, Role::Diagnosis);
        assert_eq!(none.forward_diagnosis(&image(0), Some(&[0.0, 1.0, 0.0])), Err(Error::AuxUnexpected));
        let gt = toy(FusionMode::GtOnehot, Role::Diagnosis);
        assert_eq!(gt.forward_diagnosis(&image(0), Some(&[0.3, 0.4, 0.3])), Err(Error::AuxNotOneHot));
        assert!(matches!(gt.forward_diagnosis(&image(0), None), Err(Error::AuxMissing(_))));
        let soft = toy(FusionMode::Soft, Role::Diagnosis);
        assert_eq!(soft.forward_diagnosis(&image(0), Some(&[1.2, 0.0, 0.0])), Err(Error::AuxOutOfRange));
        let p = soft.forward_diagnosis(&image(0), Some(&[0.3, 0.4, 0.3])).unwrap();
        assert_eq!(p.len(), 5);
    }

    #[test]
    fn soft_and_discrete_heads_agree_on_one_hot_input() {
        let soft = toy(FusionMode::Soft, Role::Diagnosis);
        let discrete = toy(FusionMode::DiscreteOnehot, Role::Diagnosis);
        let aux = [0.0, 1.0, 0.0];
        assert_eq!(
            soft.forward_diagnosis(&image(3), Some(&aux)).unwrap(),
            discrete.forward_diagnosis(&image(3), Some(&aux)).unwrap()
        );
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(one_hot(1, 3), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn aux_gradient_matches_finite_differences() {
        let mut m = toy(FusionMode::Soft, Role::Diagnosis);
        let img = Tensor::stack(&[image(5)]).unwrap();
        let aux = Tensor::from_vec(&[1, 3], vec![0.2, 0.5, 0.3]).unwrap();
        let target = 2;
        let logits = m.forward_train(img.clone(), Some(&aux)).unwrap();
        let p = softmax(logits.data());
        let mut d = p.clone();
        d[target] -= 1.0;
        m.zero_grad();
        let daux = m.backward(Tensor::from_vec(&[1, 5], d).unwrap()).unwrap();
        for j in 0..3 {
            let h = 1e-3;
            let nll = |delta: f32| {
                let mut a = aux.clone();
                a.data_mut()[j] += delta;
                let l = m.logits(&img, Some(&a)).unwrap();
                -libm::log(softmax(l.data())[target] as f64)
            };
            let numeric = (nll(h) - nll(-h)) / (2.0 * h as f64);
            assert!((numeric - daux.data()[j] as f64).abs() < 1e-3, "{numeric} vs {}", daux.data()[j]);
        }
    }
}
