//! The backbone zoo. Each family is built as a convolutional feature
//! extractor ending in spatial feature maps `(N, feature_dim, h, w)`; the
//! classification head (global average pooling, optional fusion, one linear
//! layer) lives in [`crate::model`].

use alloc::string::ToString;
use core::fmt;
use core::str::FromStr;

use crate::nn::{
    Act, Activation, AvgPool2d, BatchNorm2d, Conv2d, DenseConcat, MaxPool2d, Residual, Sequential, SqueezeExcite,
};
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum BackboneFamily {
    #[cfg_attr(feature = "serde", serde(rename = "vgg16-gap"))]
    Vgg16Gap,
    #[cfg_attr(feature = "serde", serde(rename = "resnet18"))]
    Resnet18,
    #[cfg_attr(feature = "serde", serde(rename = "resnet50"))]
    Resnet50,
    #[cfg_attr(feature = "serde", serde(rename = "mobilenetv2"))]
    MobilenetV2,
    #[cfg_attr(feature = "serde", serde(rename = "mobilenetv3l"))]
    MobilenetV3Large,
    #[cfg_attr(feature = "serde", serde(rename = "densenet121"))]
    Densenet121,
    #[cfg_attr(feature = "serde", serde(rename = "efficientnet-b0"))]
    EfficientnetB0,
    #[cfg_attr(feature = "serde", serde(rename = "efficientnet-b1"))]
    EfficientnetB1,
}

impl BackboneFamily {
    pub const ALL: [BackboneFamily; 8] = [
        BackboneFamily::Vgg16Gap,
        BackboneFamily::Resnet18,
        BackboneFamily::Resnet50,
        BackboneFamily::MobilenetV2,
        BackboneFamily::MobilenetV3Large,
        BackboneFamily::Densenet121,
        BackboneFamily::EfficientnetB0,
        BackboneFamily::EfficientnetB1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BackboneFamily::Vgg16Gap => "vgg16-gap",
            BackboneFamily::Resnet18 => "resnet18",
            BackboneFamily::Resnet50 => "resnet50",
            BackboneFamily::MobilenetV2 => "mobilenetv2",
            BackboneFamily::MobilenetV3Large => "mobilenetv3l",
            BackboneFamily::Densenet121 => "densenet121",
            BackboneFamily::EfficientnetB0 => "efficientnet-b0",
            BackboneFamily::EfficientnetB1 => "efficientnet-b1",
        }
    }

    /// Width of the pooled feature vector that reaches the classifier.
    pub fn feature_dim(self) -> usize {
        match self {
            BackboneFamily::MobilenetV3Large => 1280,
            other => other.spatial_channels(),
        }
    }

    /// Channel count of the last feature map. Differs from
    /// [`feature_dim`](Self::feature_dim) only for MobileNetV3, whose pooled
    /// features pass through a 960→1280 linear neck.
    pub fn spatial_channels(self) -> usize {
        match self {
            BackboneFamily::Vgg16Gap | BackboneFamily::Resnet18 => 512,
            BackboneFamily::Resnet50 => 2048,
            BackboneFamily::MobilenetV2 | BackboneFamily::EfficientnetB0 | BackboneFamily::EfficientnetB1 => 1280,
            BackboneFamily::MobilenetV3Large => 960,
            BackboneFamily::Densenet121 => 1024,
        }
    }
}

impl fmt::Display for BackboneFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BackboneFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BackboneFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::UnknownFamily(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BackboneSpec {
    pub family: BackboneFamily,
    pub pretrained: bool,
    pub feature_dim: usize,
    pub num_classes: usize,
    /// MobileNetV2 channel width multiplier; 1.0 for every other family.
    #[cfg_attr(feature = "serde", serde(default = "one"))]
    pub width_multiplier: f32,
}

#[cfg(feature = "serde")]
fn one() -> f32 {
    1.0
}

impl BackboneSpec {
    pub fn new(family: BackboneFamily, num_classes: usize) -> Self {
        Self { family, pretrained: false, feature_dim: family.feature_dim(), num_classes, width_multiplier: 1.0 }
    }

    pub fn with_width(mut self, width_multiplier: f32) -> Self {
        self.width_multiplier = width_multiplier;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::DimensionMismatch("num_classes must be positive".to_string()));
        }
        if self.feature_dim != self.family.feature_dim() {
            return Err(Error::DimensionMismatch(alloc::format!(
                "{} produces {} features, spec says {}",
                self.family,
                self.family.feature_dim(),
                self.feature_dim
            )));
        }
        let w = self.width_multiplier;
        if !(w > 0.0 && w <= 1.0) || (self.family != BackboneFamily::MobilenetV2 && w != 1.0) {
            return Err(Error::InvalidArgument(alloc::format!(
                "width multiplier {w} is not supported for {}",
                self.family
            )));
        }
        Ok(())
    }

    /// Builds the randomly initialized feature extractor.
    pub fn build_features(&self, rng: &mut Rng) -> Result<Sequential> {
        self.validate()?;
        Ok(match self.family {
            BackboneFamily::Vgg16Gap => vgg16(rng),
            BackboneFamily::Resnet18 => resnet(&[2, 2, 2, 2], false, rng),
            BackboneFamily::Resnet50 => resnet(&[3, 4, 6, 3], true, rng),
            BackboneFamily::MobilenetV2 => mobilenet_v2(self.width_multiplier, rng),
            BackboneFamily::MobilenetV3Large => mobilenet_v3_large(rng),
            BackboneFamily::Densenet121 => densenet121(rng),
            BackboneFamily::EfficientnetB0 => efficientnet(1.0, rng),
            BackboneFamily::EfficientnetB1 => efficientnet(1.1, rng),
        })
    }
}

/// Parameter count of the fully connected stack that `vgg16-gap` replaces:
/// 512·7·7 → 4096 → 4096 → `num_classes`.
pub fn vgg16_reference_head_params(num_classes: usize) -> usize {
    (25088 * 4096 + 4096) + (4096 * 4096 + 4096) + (4096 * num_classes + num_classes)
}

fn conv_bn(
    seq: &mut Sequential,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    groups: usize,
    act: Option<Activation>,
    rng: &mut Rng,
) {
    seq.push(Conv2d::new(cin, cout, k, stride, (k - 1) / 2, groups, false, rng));
    seq.push(BatchNorm2d::new(cout));
    if let Some(a) = act {
        seq.push(Act::new(a));
    }
}

fn make_divisible(v: f32, divisor: usize) -> usize {
    let d = divisor as f32;
    let mut new_v = ((v + d / 2.0) as usize / divisor * divisor).max(divisor);
    if (new_v as f32) < 0.9 * v {
        new_v += divisor;
    }
    new_v
}

fn vgg16(rng: &mut Rng) -> Sequential {
    const CFG: [usize; 18] = [64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0];
    let mut seq = Sequential::new();
    let mut cin = 3;
    for &c in &CFG {
        if c == 0 {
            seq.push(MaxPool2d::new(2, 2, 0));
        } else {
            seq.push(Conv2d::new(cin, c, 3, 1, 1, 1, true, rng));
            seq.push(Act::new(Activation::Relu));
            cin = c;
        }
    }
    seq
}

fn resnet(blocks: &[usize; 4], bottleneck: bool, rng: &mut Rng) -> Sequential {
    let mut seq = Sequential::new();
    conv_bn(&mut seq, 3, 64, 7, 2, 1, Some(Activation::Relu), rng);
    seq.push(MaxPool2d::new(3, 2, 1));
    let expansion = if bottleneck { 4 } else { 1 };
    let mut cin = 64;
    for (stage, &n) in blocks.iter().enumerate() {
        let width = 64 << stage;
        let cout = width * expansion;
        for i in 0..n {
            let stride = if stage > 0 && i == 0 { 2 } else { 1 };
            let mut body = Sequential::new();
            if bottleneck {
                conv_bn(&mut body, cin, width, 1, 1, 1, Some(Activation::Relu), rng);
                conv_bn(&mut body, width, width, 3, stride, 1, Some(Activation::Relu), rng);
                conv_bn(&mut body, width, cout, 1, 1, 1, None, rng);
            } else {
                conv_bn(&mut body, cin, width, 3, stride, 1, Some(Activation::Relu), rng);
                conv_bn(&mut body, width, cout, 3, 1, 1, None, rng);
            }
            let shortcut = (stride != 1 || cin != cout).then(|| {
                let mut sc = Sequential::new();
                conv_bn(&mut sc, cin, cout, 1, stride, 1, None, rng);
                sc
            });
            seq.push(Residual::new(body, shortcut, Some(Activation::Relu)));
            cin = cout;
        }
    }
    seq
}

fn mobilenet_v2(width: f32, rng: &mut Rng) -> Sequential {
    // (expansion, channels, repeats, first stride)
    const CFG: [(usize, usize, usize, usize); 7] =
        [(1, 16, 1, 1), (6, 24, 2, 2), (6, 32, 3, 2), (6, 64, 4, 2), (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1)];
    let mut seq = Sequential::new();
    let mut cin = make_divisible(32.0 * width, 8);
    let last = make_divisible(1280.0 * width.max(1.0), 8);
    conv_bn(&mut seq, 3, cin, 3, 2, 1, Some(Activation::Relu6), rng);
    for &(t, c, n, s) in &CFG {
        let cout = make_divisible(c as f32 * width, 8);
        for i in 0..n {
            let stride = if i == 0 { s } else { 1 };
            let hidden = cin * t;
            let mut body = Sequential::new();
            if t != 1 {
                conv_bn(&mut body, cin, hidden, 1, 1, 1, Some(Activation::Relu6), rng);
            }
            conv_bn(&mut body, hidden, hidden, 3, stride, hidden, Some(Activation::Relu6), rng);
            conv_bn(&mut body, hidden, cout, 1, 1, 1, None, rng);
            if stride == 1 && cin == cout {
                seq.push(Residual::new(body, None, None));
            } else {
                seq.extend(body);
            }
            cin = cout;
        }
    }
    conv_bn(&mut seq, cin, last, 1, 1, 1, Some(Activation::Relu6), rng);
    seq
}

fn squeeze_excite(channels: usize, squeezed: usize, inner: Activation, gate: Activation, rng: &mut Rng) -> SqueezeExcite {
    SqueezeExcite::new(
        Sequential::new()
            .with(Conv2d::new(channels, squeezed, 1, 1, 0, 1, true, rng))
            .with(Act::new(inner))
            .with(Conv2d::new(squeezed, channels, 1, 1, 0, 1, true, rng))
            .with(Act::new(gate)),
    )
}

fn mobilenet_v3_large(rng: &mut Rng) -> Sequential {
    use Activation::{Hardswish as HS, Relu as RE};
    // (in, kernel, expanded, out, squeeze-excite, activation, stride)
    const CFG: [(usize, usize, usize, usize, bool, Activation, usize); 15] = [
        (16, 3, 16, 16, false, RE, 1),
        (16, 3, 64, 24, false, RE, 2),
        (24, 3, 72, 24, false, RE, 1),
        (24, 5, 72, 40, true, RE, 2),
        (40, 5, 120, 40, true, RE, 1),
        (40, 5, 120, 40, true, RE, 1),
        (40, 3, 240, 80, false, HS, 2),
        (80, 3, 200, 80, false, HS, 1),
        (80, 3, 184, 80, false, HS, 1),
        (80, 3, 184, 80, false, HS, 1),
        (80, 3, 480, 112, true, HS, 1),
        (112, 3, 672, 112, true, HS, 1),
        (112, 5, 672, 160, true, HS, 2),
        (160, 5, 960, 160, true, HS, 1),
        (160, 5, 960, 160, true, HS, 1),
    ];
    let mut seq = Sequential::new();
    conv_bn(&mut seq, 3, 16, 3, 2, 1, Some(HS), rng);
    for &(cin, k, exp, cout, se, act, stride) in &CFG {
        let mut body = Sequential::new();
        if exp != cin {
            conv_bn(&mut body, cin, exp, 1, 1, 1, Some(act), rng);
        }
        conv_bn(&mut body, exp, exp, k, stride, exp, Some(act), rng);
        if se {
            let squeezed = make_divisible(exp as f32 / 4.0, 8);
            body.push(squeeze_excite(exp, squeezed, Activation::Relu, Activation::Hardsigmoid, rng));
        }
        conv_bn(&mut body, exp, cout, 1, 1, 1, None, rng);
        if stride == 1 && cin == cout {
            seq.push(Residual::new(body, None, None));
        } else {
            seq.extend(body);
        }
    }
    conv_bn(&mut seq, 160, 960, 1, 1, 1, Some(HS), rng);
    seq
}

fn densenet121(rng: &mut Rng) -> Sequential {
    const GROWTH: usize = 32;
    const BN_SIZE: usize = 4;
    let mut seq = Sequential::new();
    conv_bn(&mut seq, 3, 64, 7, 2, 1, Some(Activation::Relu), rng);
    seq.push(MaxPool2d::new(3, 2, 1));
    let mut c = 64;
    let blocks = [6, 12, 24, 16];
    for (b, &n) in blocks.iter().enumerate() {
        for _ in 0..n {
            let body = Sequential::new()
                .with(BatchNorm2d::new(c))
                .with(Act::new(Activation::Relu))
                .with(Conv2d::new(c, BN_SIZE * GROWTH, 1, 1, 0, 1, false, rng))
                .with(BatchNorm2d::new(BN_SIZE * GROWTH))
                .with(Act::new(Activation::Relu))
                .with(Conv2d::new(BN_SIZE * GROWTH, GROWTH, 3, 1, 1, 1, false, rng));
            seq.push(DenseConcat::new(body));
            c += GROWTH;
        }
        if b + 1 < blocks.len() {
            seq.push(BatchNorm2d::new(c));
            seq.push(Act::new(Activation::Relu));
            seq.push(Conv2d::new(c, c / 2, 1, 1, 0, 1, false, rng));
            seq.push(AvgPool2d::new(2));
            c /= 2;
        }
    }
    seq.push(BatchNorm2d::new(c));
    seq.push(Act::new(Activation::Relu));
    seq
}

fn efficientnet(depth: f32, rng: &mut Rng) -> Sequential {
    // (expansion, kernel, stride, in, out, repeats) at depth 1.0
    const CFG: [(usize, usize, usize, usize, usize, usize); 7] = [
        (1, 3, 1, 32, 16, 1),
        (6, 3, 2, 16, 24, 2),
        (6, 5, 2, 24, 40, 2),
        (6, 3, 2, 40, 80, 3),
        (6, 5, 1, 80, 112, 3),
        (6, 5, 2, 112, 192, 4),
        (6, 3, 1, 192, 320, 1),
    ];
    let mut seq = Sequential::new();
    conv_bn(&mut seq, 3, 32, 3, 2, 1, Some(Activation::Silu), rng);
    for &(t, k, s, first_in, cout, n) in &CFG {
        let repeats = libm::ceilf(n as f32 * depth) as usize;
        for i in 0..repeats {
            let cin = if i == 0 { first_in } else { cout };
            let stride = if i == 0 { s } else { 1 };
            let exp = make_divisible((cin * t) as f32, 8);
            let mut body = Sequential::new();
            if exp != cin {
                conv_bn(&mut body, cin, exp, 1, 1, 1, Some(Activation::Silu), rng);
            }
            conv_bn(&mut body, exp, exp, k, stride, exp, Some(Activation::Silu), rng);
            body.push(squeeze_excite(exp, (cin / 4).max(1), Activation::Silu, Activation::Sigmoid, rng));
            conv_bn(&mut body, exp, cout, 1, 1, 1, None, rng);
            if stride == 1 && cin == cout {
                seq.push(Residual::new(body, None, None));
            } else {
                seq.extend(body);
            }
        }
    }
    conv_bn(&mut seq, 320, 1280, 1, 1, 1, Some(Activation::Silu), rng);
    seq
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{trainable_count, Layer};
    use crate::Tensor;

    // Published parameter counts of the torchvision reference models minus
    // their classifier layers (1000-way heads).
    #[test]
    fn feature_extractor_sizes_match_reference_architectures() {
        let expected = [
            (BackboneFamily::Vgg16Gap, 138_357_544 - vgg16_reference_head_params(1000)),
            (BackboneFamily::Resnet18, 11_689_512 - 513_000),
            (BackboneFamily::Resnet50, 25_557_032 - 2_049_000),
            (BackboneFamily::MobilenetV2, 3_504_872 - 1_281_000),
            (BackboneFamily::MobilenetV3Large, 5_483_032 - 1_230_080 - 1_281_000),
            (BackboneFamily::Densenet121, 7_978_856 - 1_025_000),
            (BackboneFamily::EfficientnetB0, 5_288_548 - 1_281_000),
            (BackboneFamily::EfficientnetB1, 7_794_184 - 1_281_000),
        ];
        let mut rng = Rng::seed(0);
        for (family, want) in expected {
            let features = BackboneSpec::new(family, 3).build_features(&mut rng).unwrap();
            assert_eq!(trainable_count(&features), want, "{family}");
        }
    }

    #[test]
    fn output_is_spatial_with_feature_dim_channels() {
        let mut rng = Rng::seed(1);
        for family in [BackboneFamily::Resnet18, BackboneFamily::MobilenetV2, BackboneFamily::MobilenetV3Large] {
            let features = BackboneSpec::new(family, 3).build_features(&mut rng).unwrap();
            let y = features.infer(&Tensor::zeros(&[1, 3, 64, 64]));
            assert_eq!(y.shape(), &[1, family.spatial_channels(), 2, 2], "{family}");
        }
    }

    #[test]
    fn names_round_trip() {
        for family in BackboneFamily::ALL {
            assert_eq!(family.name().parse::<BackboneFamily>().unwrap(), family);
        }
        assert!(matches!("alexnet".parse::<BackboneFamily>(), Err(Error::UnknownFamily(_))));
    }

    #[test]
    fn width_multiplier_only_for_mobilenet_v2() {
        assert!(BackboneSpec::new(BackboneFamily::MobilenetV2, 3).with_width(0.35).validate().is_ok());
        assert!(BackboneSpec::new(BackboneFamily::Resnet18, 3).with_width(0.5).validate().is_err());
        let mut spec = BackboneSpec::new(BackboneFamily::Resnet18, 3);
        spec.feature_dim = 256;
        assert!(matches!(spec.validate(), Err(Error::DimensionMismatch(_))));
    }
}
