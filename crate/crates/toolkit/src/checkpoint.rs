//! Checkpoints: a little-endian weight file plus a `.meta.toml` sidecar
//! holding everything needed to rebuild the model.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use lesionelev_core::backbone::BackboneSpec;
use lesionelev_core::data::{LabelSchema, Modality};
use lesionelev_core::model::{build_model, FusionHead, ModelBundle, Role};
use lesionelev_core::preprocess::PreprocessConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ToolError};

const MAGIC: &[u8; 4] = b"LEW1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Stable identifier, recorded as `source_model` in label files.
    pub id: String,
    pub role: Role,
    pub modality: Option<Modality>,
    pub epoch: usize,
    pub seed: u64,
    /// sha256 of the resolved experiment and training configuration.
    pub config_hash: String,
    pub spec: BackboneSpec,
    pub fusion: FusionHead,
    pub preprocess: PreprocessConfig,
    pub schema: LabelSchema,
}

pub fn meta_path(weights: &Path) -> PathBuf {
    let mut name = weights.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.toml");
    weights.with_file_name(name)
}

pub fn encode_state(state: &[Vec<f32>]) -> Vec<u8> {
    let total: usize = state.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(8 + 8 * state.len() + 4 * total);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(state.len() as u32).to_le_bytes());
    for slot in state {
        out.extend_from_slice(&(slot.len() as u64).to_le_bytes());
        for v in slot {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_state(bytes: &[u8]) -> Option<Vec<Vec<f32>>> {
    let rest = bytes.strip_prefix(MAGIC)?;
    let (count, mut rest) = rest.split_first_chunk::<4>()?;
    let mut state = Vec::with_capacity(u32::from_le_bytes(*count) as usize);
    for _ in 0..u32::from_le_bytes(*count) {
        let (len, tail) = rest.split_first_chunk::<8>()?;
        let n = usize::try_from(u64::from_le_bytes(*len)).ok()?;
        let body = tail.get(..n.checked_mul(4)?)?;
        state.push(body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect());
        rest = &tail[n * 4..];
    }
    rest.is_empty().then_some(state)
}

pub fn save(path: &Path, model: &ModelBundle, meta: &CheckpointMeta) -> Result<()> {
    let text = toml::to_string(meta).map_err(|e| ToolError::Runtime(format!("serializing checkpoint metadata: {e}")))?;
    let mut f = fs::File::create(path).map_err(|e| ToolError::write(path, e))?;
    f.write_all(&encode_state(&model.state())).map_err(|e| ToolError::write(path, e))?;
    let meta_file = meta_path(path);
    fs::write(&meta_file, text).map_err(|e| ToolError::write(&meta_file, e))
}

pub fn remove(path: &Path) -> Result<()> {
    for p in [path.to_path_buf(), meta_path(path)] {
        if p.exists() {
            fs::remove_file(&p).map_err(|e| ToolError::write(&p, e))?;
        }
    }
    Ok(())
}

pub fn load_meta(path: &Path) -> Result<CheckpointMeta> {
    let meta_file = meta_path(path);
    let text = fs::read_to_string(&meta_file).map_err(|e| ToolError::io(&meta_file, e))?;
    toml::from_str(&text).map_err(|e| ToolError::Data(format!("{}: {e}", meta_file.display())))
}

pub fn load_weights(path: &Path) -> Result<Vec<Vec<f32>>> {
    let bytes = fs::read(path).map_err(|e| ToolError::io(path, e))?;
    decode_state(&bytes).ok_or_else(|| ToolError::Data(format!("{}: not a LEW1 weight file", path.display())))
}

/// Rebuilds the model recorded in a checkpoint.
pub fn load(path: &Path) -> Result<(ModelBundle, CheckpointMeta)> {
    let meta = load_meta(path)?;
    let mut model = build_model(&meta.spec, meta.fusion, meta.role, 0)?;
    model
        .load_state(&load_weights(path)?)
        .map_err(|e| ToolError::Data(format!("{}: {e}", path.display())))?;
    model.set_modality(meta.modality);
    Ok((model, meta))
}

/// Copies every backbone and neck weight of a checkpoint into `model`,
/// leaving its classifier untouched. Both models must use the same
/// backbone architecture.
pub fn load_backbone(path: &Path, model: &mut ModelBundle) -> Result<()> {
    let source = load_weights(path)?;
    let mut state = model.state();
    let keep = 2; // classifier weight and bias
    if source.len() != state.len() || state.len() < keep {
        return Err(ToolError::Config(format!(
            "{}: backbone has {} weight slots, model has {}",
            path.display(),
            source.len().saturating_sub(keep),
            state.len().saturating_sub(keep)
        )));
    }
    let n = state.len() - keep;
    state[..n].clone_from_slice(&source[..n]);
    model.load_state(&state).map_err(|e| ToolError::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use lesionelev_core::backbone::BackboneFamily;
    use lesionelev_core::model::FusionMode;

    fn meta(spec: &BackboneSpec, fusion: FusionHead) -> CheckpointMeta {
        CheckpointMeta {
            id: "elevation/run0/epoch-2".into(),
            role: Role::Diagnosis,
            modality: Some(Modality::Clinical),
            epoch: 2,
            seed: 7,
            config_hash: "00".into(),
            spec: spec.clone(),
            fusion,
            preprocess: PreprocessConfig::default(),
            schema: LabelSchema::derm7pt(),
        }
    }

    #[test]
    fn state_codec_round_trip_and_rejects_truncation() {
        let state = vec![vec![1.0f32, -2.5], vec![], vec![f32::MIN_POSITIVE]];
        let bytes = encode_state(&state);
        assert_eq!(decode_state(&bytes).unwrap(), state);
        assert!(decode_state(&bytes[..bytes.len() - 1]).is_none());
        assert!(decode_state(b"LEW0").is_none());
    }

    #[test]
    fn save_load_reproduces_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let spec = BackboneSpec::new(BackboneFamily::MobilenetV2, 5).with_width(0.35);
        let fusion = FusionHead::new(spec.feature_dim, 3, 5, FusionMode::Soft).unwrap();
        let model = build_model(&spec, fusion, Role::Diagnosis, 11).unwrap();
        let path = dir.path().join("m.lew");
        let m = meta(&spec, fusion);
        save(&path, &model, &m).unwrap();
        let (back, got) = load(&path).unwrap();
        assert_eq!(got, m);
        assert_eq!(back.state(), model.state());
        assert_eq!(back.modality(), Some(Modality::Clinical));

        let mut plain = build_model(&spec, FusionHead::plain(&spec), Role::Diagnosis, 3).unwrap();
        load_backbone(&path, &mut plain).unwrap();
        let other = BackboneSpec::new(BackboneFamily::Resnet18, 5);
        let mut wrong = build_model(&other, FusionHead::plain(&other), Role::Diagnosis, 3).unwrap();
        assert!(matches!(load_backbone(&path, &mut wrong), Err(ToolError::Config(_))));
        remove(&path).unwrap();
        assert!(!path.exists() && !meta_path(&path).exists());
    }

    #[test]
    fn backbone_transfer_keeps_classifier() {
        let dir = tempfile::tempdir().unwrap();
        let spec = BackboneSpec::new(BackboneFamily::MobilenetV2, 3).with_width(0.35);
        let src = build_model(&spec, FusionHead::plain(&spec), Role::Elevation, 1).unwrap();
        let path = dir.path().join("src.lew");
        save(&path, &src, &meta(&spec, FusionHead::plain(&spec))).unwrap();
        let mut dst = build_model(&spec, FusionHead::plain(&spec), Role::Elevation, 2).unwrap();
        let before = dst.state();
        load_backbone(&path, &mut dst).unwrap();
        let after = dst.state();
        let n = after.len();
        assert_eq!(after[..n - 2], src.state()[..n - 2]);
        assert_eq!(after[n - 2..], before[n - 2..]);
    }
}
