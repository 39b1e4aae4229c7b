//! Schema files, manifest CSVs and split files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use lesionelev_core::data::{DatasetManifest, ImageRecord, LabelSchema, Modality};
use lesionelev_core::split::{Split, SplitAssignment, StratifyOn};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ToolError};

pub const MANIFEST_HEADER: [&str; 5] = ["image_id", "image_path", "modality", "diagnosis", "elevation"];

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    diagnosis_classes: Vec<String>,
    elevation_classes: Vec<String>,
    #[serde(default)]
    diagnosis_grouping: BTreeMap<String, String>,
}

/// Reads a schema file:
///
/// ```toml
/// diagnosis_classes = ["BCC", "MEL", "NEV", "SK", "MISC"]
/// elevation_classes = ["flat", "palpable", "nodular"]
///
/// [diagnosis_grouping]
/// "basal cell carcinoma" = "BCC"
/// ```
///
/// Each grouped class name also maps to itself, so manifests may use either
/// raw or grouped labels.
pub fn load_schema(path: &Path) -> Result<LabelSchema> {
    let text = fs::read_to_string(path).map_err(|e| ToolError::Config(format!("{}: {e}", path.display())))?;
    parse_schema(&text).map_err(|e| match e {
        ToolError::Config(m) => ToolError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_schema(text: &str) -> Result<LabelSchema> {
    let file: SchemaFile = toml::from_str(text).map_err(|e| ToolError::Config(e.to_string()))?;
    let mut grouping = file.diagnosis_grouping;
    for c in &file.diagnosis_classes {
        grouping.entry(c.clone()).or_insert_with(|| c.clone());
    }
    LabelSchema::new(file.diagnosis_classes, file.elevation_classes, grouping)
        .map_err(|e| ToolError::Config(e.to_string()))
}

pub fn schema_to_string(schema: &LabelSchema) -> String {
    let file = SchemaFile {
        diagnosis_classes: schema.diagnosis_classes.clone(),
        elevation_classes: schema.elevation_classes.clone(),
        diagnosis_grouping: schema.diagnosis_grouping.clone(),
    };
    toml::to_string(&file).expect("schema serializes")
}

fn data_err(path: &Path, line: usize, msg: impl std::fmt::Display) -> ToolError {
    ToolError::Data(format!("{}:{line}: {msg}", path.display()))
}

/// Loads a manifest CSV. Relative image paths are resolved against the
/// manifest's directory. Raw diagnosis labels go through the schema
/// grouping; an unknown label fails the load.
pub fn load_manifest(path: &Path, schema: &LabelSchema) -> Result<DatasetManifest> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ToolError::Data(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| data_err(path, 1, e))?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let mut required = [0usize; 3];
    for (slot, name) in required.iter_mut().zip(["image_id", "image_path", "modality"]) {
        *slot = column(name).ok_or_else(|| data_err(path, 1, format!("missing required column {name:?}")))?;
    }
    let diagnosis = column("diagnosis");
    let elevation = column("elevation");
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| data_err(path, line, e))?;
        let cell = |c: Option<usize>| c.and_then(|c| row.get(c)).filter(|s| !s.is_empty());
        let image_id = cell(Some(required[0])).ok_or_else(|| data_err(path, line, "empty image_id"))?;
        let image_path = cell(Some(required[1])).ok_or_else(|| data_err(path, line, "empty image_path"))?;
        let modality: Modality =
            cell(Some(required[2])).unwrap_or_default().parse().map_err(|e| data_err(path, line, e))?;
        let diagnosis = cell(diagnosis).map(|d| schema.group_diagnosis(d)).transpose().map_err(|e| data_err(path, line, e))?;
        let elevation = cell(elevation).map(|e| schema.elevation(e)).transpose().map_err(|e| data_err(path, line, e))?;
        let resolved = if Path::new(image_path).is_absolute() { PathBuf::from(image_path) } else { base.join(image_path) };
        records.push(ImageRecord {
            image_id: image_id.to_string(),
            image_path: resolved.to_string_lossy().into_owned(),
            modality,
            diagnosis,
            elevation,
        });
    }
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    DatasetManifest::new(name, schema.clone(), records).map_err(|e| ToolError::Data(format!("{}: {e}", path.display())))
}

/// Writes a manifest CSV with grouped class names and image paths as given.
pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| ToolError::write(path, e))?;
    w.write_record(MANIFEST_HEADER).map_err(|e| ToolError::write(path, e))?;
    let s = &manifest.schema;
    for r in manifest.records() {
        let d = r.diagnosis.map(|d| s.diagnosis_classes[d.0].as_str()).unwrap_or("");
        let e = r.elevation.map(|e| s.elevation_classes[e.0].as_str()).unwrap_or("");
        w.write_record([r.image_id.as_str(), r.image_path.as_str(), r.modality.name(), d, e])
            .map_err(|e| ToolError::write(path, e))?;
    }
    w.flush().map_err(|e| ToolError::write(path, e))
}

/// Split file: `image_id,split` rows in manifest order.
pub fn write_split(path: &Path, manifest: &DatasetManifest, split: &SplitAssignment) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| ToolError::write(path, e))?;
    w.write_record(["image_id", "split"]).map_err(|e| ToolError::write(path, e))?;
    for r in manifest.records() {
        if let Some(s) = split.get(&r.image_id) {
            w.write_record([r.image_id.as_str(), s.name()]).map_err(|e| ToolError::write(path, e))?;
        }
    }
    w.flush().map_err(|e| ToolError::write(path, e))
}

pub fn load_split(path: &Path) -> Result<BTreeMap<String, Split>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| ToolError::Data(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| data_err(path, i + 2, e))?;
        let (Some(id), Some(split)) = (row.get(0), row.get(1)) else {
            return Err(data_err(path, i + 2, "expected image_id,split"));
        };
        let split: Split = split.parse().map_err(|e| data_err(path, i + 2, e))?;
        if out.insert(id.to_string(), split).is_some() {
            return Err(data_err(path, i + 2, format!("duplicate image_id {id:?}")));
        }
    }
    Ok(out)
}

/// Rebuilds a [`SplitAssignment`] from a split file; every manifest record
/// must be assigned.
pub fn split_for(manifest: &DatasetManifest, path: &Path) -> Result<SplitAssignment> {
    let assignments = load_split(path)?;
    if let Some(r) = manifest.records().iter().find(|r| !assignments.contains_key(&r.image_id)) {
        return Err(ToolError::Data(format!("{}: no split for image_id {:?}", path.display(), r.image_id)));
    }
    Ok(SplitAssignment { assignments, ratios: [f64::NAN; 3], stratify_on: StratifyOn::None, seed: 0 })
}

/// Class-weight file: `class,count,weight` rows.
pub fn write_class_weights(path: &Path, classes: &[String], counts: &[usize], weights: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| ToolError::write(path, e))?;
    w.write_record(["class", "count", "weight"]).map_err(|e| ToolError::write(path, e))?;
    for ((c, n), wt) in classes.iter().zip(counts).zip(weights) {
        w.write_record([c.clone(), n.to_string(), format!("{wt:.12}")]).map_err(|e| ToolError::write(path, e))?;
    }
    w.flush().map_err(|e| ToolError::write(path, e))
}

pub fn load_class_weights(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| ToolError::Data(format!("{}: {e}", path.display())))?;
    reader
        .records()
        .enumerate()
        .map(|(i, row)| {
            let row = row.map_err(|e| data_err(path, i + 2, e))?;
            row.get(2)
                .and_then(|w| w.parse::<f64>().ok())
                .ok_or_else(|| data_err(path, i + 2, "expected class,count,weight"))
        })
        .collect()
}
