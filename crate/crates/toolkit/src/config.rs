//! Experiment and training configuration files.
//!
//! An experiment file is TOML. Paths are relative to the file's directory,
//! except `labels` and `split.file`, which name artifacts produced by
//! earlier subcommands and resolve against the output directory.
//!
//! ```toml
//! seed = 0
//! manifest = "data/manifest.csv"
//! schema = "data/schema.toml"
//! role = "diagnosis"
//! fusion = "soft"
//! labels = "labels.csv"
//! train_config = "train.cfg"
//!
//! [split]
//! ratios = [0.7, 0.15, 0.15]
//! stratify_on = "elevation"
//!
//! [backbone]
//! family = "mobilenetv2"
//! width_multiplier = 0.35
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use lesionelev_core::backbone::{BackboneFamily, BackboneSpec};
use lesionelev_core::data::Modality;
use lesionelev_core::metrics::BootstrapConfig;
use lesionelev_core::model::{FusionMode, Role};
use lesionelev_core::preprocess::PreprocessConfig;
use lesionelev_core::split::{check_ratios, Split, StratifyOn};
use lesionelev_core::train::TrainConfig;
use lesionelev_core::weights::ClassWeights;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{Result, ToolError};

/// Training hyperparameters, keyed by the [`TrainConfig`] field names.
/// Missing keys take the defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    momentum: Option<f64>,
    weight_decay: Option<f64>,
    lr_decay_factor: Option<f64>,
    lr_decay_every: Option<usize>,
    seed: Option<u64>,
    class_weights: Option<Vec<f64>>,
    repeats: Option<usize>,
}

impl TrainFile {
    pub fn resolve(self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            lr: self.lr.unwrap_or(d.lr),
            momentum: self.momentum.unwrap_or(d.momentum),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            lr_decay_factor: self.lr_decay_factor.unwrap_or(d.lr_decay_factor),
            lr_decay_every: self.lr_decay_every.unwrap_or(d.lr_decay_every),
            seed: self.seed.unwrap_or(d.seed),
            class_weights: self.class_weights.map(ClassWeights),
            repeats: self.repeats.unwrap_or(d.repeats),
        }
    }
}

/// Parses a flat `key = value` training file.
pub fn parse_train_config(text: &str) -> Result<TrainConfig> {
    let file: TrainFile = toml::from_str(text).map_err(|e| ToolError::Config(format!("training config: {e}")))?;
    let cfg = file.resolve();
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitSection {
    #[serde(default = "default_ratios")]
    ratios: [f64; 3],
    stratify_on: Option<String>,
    file: Option<PathBuf>,
}

fn default_ratios() -> [f64; 3] {
    [0.7, 0.15, 0.15]
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { ratios: default_ratios(), stratify_on: None, file: None }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BackboneSection {
    family: String,
    #[serde(default)]
    pretrained: bool,
    #[serde(default = "one")]
    width_multiplier: f32,
}

fn one() -> f32 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PreprocessSection {
    image_size: Option<usize>,
    mean: Option<[f32; 3]>,
    std: Option<[f32; 3]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BootstrapSection {
    level: Option<f64>,
    resamples: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentFile {
    name: Option<String>,
    seed: Option<u64>,
    manifest: PathBuf,
    schema: PathBuf,
    role: String,
    #[serde(default)]
    fusion: Option<String>,
    labels: Option<PathBuf>,
    modality: Option<String>,
    init_checkpoint: Option<PathBuf>,
    eval_split: Option<String>,
    train_config: Option<PathBuf>,
    #[serde(default)]
    split: SplitSection,
    backbone: BackboneSection,
    preprocess: Option<PreprocessSection>,
    train: Option<TrainFile>,
    bootstrap: Option<BootstrapSection>,
}

/// A fully resolved experiment.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub name: String,
    pub seed: u64,
    pub manifest: PathBuf,
    pub schema: PathBuf,
    pub role: Role,
    pub fusion: FusionMode,
    /// Relative to the output directory unless absolute.
    pub labels: Option<PathBuf>,
    /// Keeps only records of this modality.
    pub modality: Option<Modality>,
    pub init_checkpoint: Option<PathBuf>,
    pub eval_split: Split,
    pub ratios: [f64; 3],
    pub stratify_on: StratifyOn,
    /// Relative to the output directory unless absolute.
    pub split_file: PathBuf,
    pub family: BackboneFamily,
    pub pretrained: bool,
    pub width_multiplier: f32,
    pub preprocess: PreprocessConfig,
    pub train: TrainConfig,
    pub bootstrap: BootstrapConfig,
    /// sha256 over the experiment file, the training file and the seed.
    pub config_hash: String,
}

fn parse<T>(what: &str, r: std::result::Result<T, lesionelev_core::Error>) -> Result<T> {
    r.map_err(|e| ToolError::Config(format!("{what}: {e}")))
}

fn cfg_err(path: &Path, msg: impl std::fmt::Display) -> ToolError {
    ToolError::Config(format!("{}: {msg}", path.display()))
}

impl Experiment {
    /// Loads an experiment file. `seed_override` replaces every seed in the
    /// file.
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| cfg_err(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base, seed_override).map_err(|e| match e {
            ToolError::Config(m) => cfg_err(path, m),
            other => other,
        })
    }

    pub fn parse(text: &str, base: &Path, seed_override: Option<u64>) -> Result<Self> {
        let file: ExperimentFile = toml::from_str(text).map_err(|e| ToolError::Config(e.to_string()))?;
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());

        let (train_file, train_text) = match (file.train, &file.train_config) {
            (Some(_), Some(_)) => return Err(ToolError::Config("give either [train] or train_config, not both".into())),
            (Some(t), None) => (t, None),
            (None, Some(p)) => {
                let p = base.join(p);
                let t = fs::read_to_string(&p).map_err(|e| cfg_err(&p, e))?;
                let parsed: TrainFile = toml::from_str(&t).map_err(|e| cfg_err(&p, e))?;
                (parsed, Some(t))
            }
            (None, None) => (TrainFile::default(), None),
        };
        if let Some(t) = &train_text {
            hasher.update(t.as_bytes());
        }
        let mut train = train_file.resolve();
        let seed = seed_override.or(file.seed).unwrap_or(train.seed);
        train.seed = seed;
        train.validate()?;
        hasher.update(seed.to_le_bytes());

        let role: Role = parse("role", file.role.parse())?;
        let fusion: FusionMode = parse("fusion", file.fusion.as_deref().unwrap_or("none").parse())?;
        if role == Role::Elevation && fusion != FusionMode::None {
            return Err(ToolError::Config("elevation models take no fusion".into()));
        }
        if matches!(fusion, FusionMode::Soft | FusionMode::DiscreteOnehot) && file.labels.is_none() {
            return Err(ToolError::Config(format!("fusion {fusion} needs an elevation label file (labels = ...)")));
        }
        let modality = file.modality.as_deref().map(str::parse).transpose();
        let modality = parse("modality", modality)?;
        let eval_split = parse("eval_split", file.eval_split.as_deref().unwrap_or("test").parse())?;
        let stratify_on = match &file.split.stratify_on {
            Some(s) => parse("split.stratify_on", s.parse())?,
            None => match role {
                Role::Elevation => StratifyOn::Elevation,
                Role::Diagnosis => StratifyOn::Diagnosis,
            },
        };
        parse("split.ratios", check_ratios(file.split.ratios))?;

        let family: BackboneFamily = parse("backbone.family", file.backbone.family.parse())?;
        let spec = BackboneSpec::new(family, 1).with_width(file.backbone.width_multiplier);
        parse("backbone", spec.validate())?;

        let d = PreprocessConfig::default();
        let preprocess = match file.preprocess {
            None => d,
            Some(p) => PreprocessConfig {
                image_size: p.image_size.unwrap_or(d.image_size),
                mean: p.mean.unwrap_or(d.mean),
                std: p.std.unwrap_or(d.std),
            },
        };
        parse("preprocess", preprocess.validate())?;
        let db = BootstrapConfig::default();
        let bootstrap = match file.bootstrap {
            None => BootstrapConfig { seed, ..db },
            Some(b) => BootstrapConfig {
                level: b.level.unwrap_or(db.level),
                resamples: b.resamples.unwrap_or(db.resamples),
                seed,
            },
        };
        if !(bootstrap.level > 0.0 && bootstrap.level < 1.0) || bootstrap.resamples < 100 {
            return Err(ToolError::Config("bootstrap needs level in (0, 1) and at least 100 resamples".into()));
        }
        let name = file.name.unwrap_or_else(|| match role {
            Role::Elevation => "elevation".into(),
            Role::Diagnosis => format!("diagnosis-{fusion}"),
        });
        if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
            return Err(ToolError::Config(format!("model name {name:?} must be a plain directory name")));
        }
        Ok(Self {
            name,
            seed,
            manifest: base.join(file.manifest),
            schema: base.join(file.schema),
            role,
            fusion,
            labels: file.labels,
            modality,
            init_checkpoint: file.init_checkpoint.map(|p| base.join(p)),
            eval_split,
            ratios: file.split.ratios,
            stratify_on,
            split_file: file.split.file.unwrap_or_else(|| PathBuf::from("split.csv")),
            family,
            pretrained: file.backbone.pretrained,
            width_multiplier: file.backbone.width_multiplier,
            preprocess,
            train,
            bootstrap,
            config_hash: hex::encode(hasher.finalize()),
        })
    }

    pub fn spec(&self, num_classes: usize) -> BackboneSpec {
        let mut spec = BackboneSpec::new(self.family, num_classes).with_width(self.width_multiplier);
        spec.pretrained = self.pretrained;
        spec
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
manifest = "m.csv"
schema = "s.toml"
role = "diagnosis"
[backbone]
family = "resnet18"
"#;

    fn parse(extra: &str) -> Result<Experiment> {
        Experiment::parse(&format!("{BASE}{extra}"), Path::new("/cfg"), None)
    }

    #[test]
    fn defaults() {
        let e = parse("").unwrap();
        assert_eq!(e.fusion, FusionMode::None);
        assert_eq!(e.name, "diagnosis-none");
        assert_eq!(e.manifest, Path::new("/cfg/m.csv"));
        assert_eq!(e.train.epochs, 50);
        assert_eq!(e.ratios, [0.7, 0.15, 0.15]);
        assert_eq!(e.stratify_on, StratifyOn::Diagnosis);
        assert_eq!(e.preprocess, PreprocessConfig::default());
        assert_eq!(e.eval_split, Split::Test);
    }

    #[test]
    fn soft_fusion_requires_labels() {
        let err = Experiment::parse(&BASE.replace("role = \"diagnosis\"", "role = \"diagnosis\"\nfusion = \"soft\""), Path::new("."), None)
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("label file"));
    }

    #[test]
    fn seed_flows_everywhere_and_changes_hash() {
        let a = parse("[train]\nseed = 4\nepochs = 2\n").unwrap();
        assert_eq!((a.seed, a.train.seed, a.bootstrap.seed), (4, 4, 4));
        let b = Experiment::parse(&format!("{BASE}[train]\nseed = 4\nepochs = 2\n"), Path::new("/cfg"), Some(9)).unwrap();
        assert_eq!((b.seed, b.train.seed, b.bootstrap.seed), (9, 9, 9));
        assert_ne!(a.config_hash, b.config_hash);
        assert_eq!(a.config_hash, parse("[train]\nseed = 4\nepochs = 2\n").unwrap().config_hash);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(parse("colour = 1\n").is_err());
        assert!(parse("[train]\nepochz = 1\n").is_err());
        assert!(parse("[train]\nepochs = 0\n").is_err());
        assert!(parse("[split]\nratios = [0.5, 0.5, 0.5]\n").is_err());
        assert!(Experiment::parse(&BASE.replace("resnet18", "alexnet"), Path::new("."), None).is_err());
    }

    #[test]
    fn flat_train_file() {
        let cfg = parse_train_config("epochs = 5\nlr = 0.05\nclass_weights = [1.0, 2.0]\n").unwrap();
        assert_eq!(cfg.epochs, 5);
        assert_eq!(cfg.class_weights.unwrap().0, vec![1.0, 2.0]);
        assert_eq!(cfg.momentum, 0.9);
        assert!(parse_train_config("[nested]\nepochs = 1\n").is_err());
    }
}
