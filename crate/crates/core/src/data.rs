//! Records, label schemas and manifests.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Modality {
    Clinical,
    Dermoscopic,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Clinical => "clinical",
            Modality::Dermoscopic => "dermoscopic",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clinical" => Ok(Modality::Clinical),
            "dermoscopic" => Ok(Modality::Dermoscopic),
            other => Err(Error::UnknownLabel { column: "modality", label: other.to_string() }),
        }
    }
}

/// Index into [`LabelSchema::diagnosis_classes`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DiagnosisLabel(pub usize);

/// Index into [`LabelSchema::elevation_classes`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ElevationLabel(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub image_path: String,
    pub modality: Modality,
    pub diagnosis: Option<DiagnosisLabel>,
    pub elevation: Option<ElevationLabel>,
}

/// Which label column a record set is stratified on, or a model predicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum LabelKind {
    Elevation,
    Diagnosis,
}

impl LabelKind {
    pub fn column(self) -> &'static str {
        match self {
            LabelKind::Elevation => "elevation",
            LabelKind::Diagnosis => "diagnosis",
        }
    }
}

impl ImageRecord {
    pub fn label(&self, kind: LabelKind) -> Option<usize> {
        match kind {
            LabelKind::Elevation => self.elevation.map(|e| e.0),
            LabelKind::Diagnosis => self.diagnosis.map(|d| d.0),
        }
    }

    pub fn require_label(&self, kind: LabelKind) -> Result<usize> {
        self.label(kind)
            .ok_or_else(|| Error::MissingLabel { image_id: self.image_id.clone(), column: kind.column() })
    }
}

/// Ordered class lists plus the raw-to-grouped diagnosis mapping. Index `i`
/// of any prediction vector refers to position `i` of the matching list.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LabelSchema {
    pub diagnosis_classes: Vec<String>,
    pub elevation_classes: Vec<String>,
    pub diagnosis_grouping: BTreeMap<String, String>,
}

fn check_classes(what: &str, classes: &[String]) -> Result<()> {
    if classes.is_empty() {
        return Err(Error::InvalidSchema(format!("{what} class list is empty")));
    }
    let mut seen = BTreeSet::new();
    for c in classes {
        if c.is_empty() || !seen.insert(c.as_str()) {
            return Err(Error::InvalidSchema(format!("{what} class {c:?} is empty or repeated")));
        }
    }
    Ok(())
}

impl LabelSchema {
    pub fn new(
        diagnosis_classes: Vec<String>,
        elevation_classes: Vec<String>,
        diagnosis_grouping: BTreeMap<String, String>,
    ) -> Result<Self> {
        let schema = Self { diagnosis_classes, elevation_classes, diagnosis_grouping };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        check_classes("diagnosis", &self.diagnosis_classes)?;
        check_classes("elevation", &self.elevation_classes)?;
        for (raw, grouped) in &self.diagnosis_grouping {
            if !self.diagnosis_classes.contains(grouped) {
                return Err(Error::InvalidSchema(format!(
                    "grouping maps {raw:?} to {grouped:?}, which is not a diagnosis class"
                )));
            }
        }
        Ok(())
    }

    /// The derm7pt grouping: five diagnosis groups and three elevations.
    pub fn derm7pt() -> Self {
        let groups: [(&str, &[&str]); 5] = [
            ("BCC", &["basal cell carcinoma"]),
            (
                "MEL",
                &[
                    "melanoma",
                    "melanoma (in situ)",
                    "melanoma (less than 0.76 mm)",
                    "melanoma (0.76 to 1.5 mm)",
                    "melanoma (more than 1.5 mm)",
                    "melanoma metastasis",
                ],
            ),
            (
                "NEV",
                &[
                    "blue nevus",
                    "clark nevus",
                    "combined nevus",
                    "congenital nevus",
                    "dermal nevus",
                    "recurrent nevus",
                    "reed or spitz nevus",
                ],
            ),
            ("SK", &["seborrheic keratosis"]),
            ("MISC", &["dermatofibroma", "lentigo", "melanosis", "miscellaneous", "vascular lesion"]),
        ];
        let mut grouping = BTreeMap::new();
        for (class, raws) in groups {
            grouping.insert(class.to_string(), class.to_string());
            for raw in raws {
                grouping.insert(raw.to_string(), class.to_string());
            }
        }
        Self {
            diagnosis_classes: groups.iter().map(|(c, _)| c.to_string()).collect(),
            elevation_classes: vec!["flat".into(), "palpable".into(), "nodular".into()],
            diagnosis_grouping: grouping,
        }
    }

    pub fn num_diagnosis(&self) -> usize {
        self.diagnosis_classes.len()
    }

    pub fn num_elevation(&self) -> usize {
        self.elevation_classes.len()
    }

    pub fn classes(&self, kind: LabelKind) -> &[String] {
        match kind {
            LabelKind::Elevation => &self.elevation_classes,
            LabelKind::Diagnosis => &self.diagnosis_classes,
        }
    }

    /// Maps a raw dataset diagnosis through the grouping.
    pub fn group_diagnosis(&self, raw: &str) -> Result<DiagnosisLabel> {
        let grouped = self
            .diagnosis_grouping
            .get(raw)
            .ok_or_else(|| Error::UnknownLabel { column: "diagnosis", label: raw.to_string() })?;
        let idx = self.diagnosis_classes.iter().position(|c| c == grouped).expect("validated schema");
        Ok(DiagnosisLabel(idx))
    }

    pub fn elevation(&self, name: &str) -> Result<ElevationLabel> {
        self.elevation_classes
            .iter()
            .position(|c| c == name)
            .map(ElevationLabel)
            .ok_or_else(|| Error::UnknownLabel { column: "elevation", label: name.to_string() })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub schema: LabelSchema,
    records: Vec<ImageRecord>,
}

impl DatasetManifest {
    /// Checks image_id uniqueness and that every label indexes the schema.
    pub fn new(name: impl Into<String>, schema: LabelSchema, records: Vec<ImageRecord>) -> Result<Self> {
        schema.validate()?;
        let mut ids = BTreeSet::new();
        for r in &records {
            if !ids.insert(r.image_id.as_str()) {
                return Err(Error::DuplicateImageId(r.image_id.clone()));
            }
            if let Some(d) = r.diagnosis {
                if d.0 >= schema.num_diagnosis() {
                    return Err(Error::TargetOutOfRange { index: d.0, classes: schema.num_diagnosis() });
                }
            }
            if let Some(e) = r.elevation {
                if e.0 >= schema.num_elevation() {
                    return Err(Error::TargetOutOfRange { index: e.0, classes: schema.num_elevation() });
                }
            }
        }
        Ok(Self { name: name.into(), schema, records })
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.image_id == image_id)
    }

    /// Per-class counts of a label column in one pass; records without the
    /// label are skipped.
    pub fn class_counts(&self, kind: LabelKind) -> Vec<usize> {
        let mut counts = vec![0; self.schema.classes(kind).len()];
        for r in &self.records {
            if let Some(c) = r.label(kind) {
                counts[c] += 1;
            }
        }
        counts
    }

    /// Keeps only records carrying `kind`, returning the number dropped.
    pub fn drop_unlabeled(&mut self, kind: LabelKind) -> usize {
        let before = self.records.len();
        self.records.retain(|r| r.label(kind).is_some());
        before - self.records.len()
    }

    /// The single modality shared by every record, if there is one.
    pub fn modality(&self) -> Option<Modality> {
        let first = self.records.first()?.modality;
        self.records.iter().all(|r| r.modality == first).then_some(first)
    }

    /// Sub-manifest with the records whose ids satisfy `keep`, in manifest order.
    pub fn filter(&self, mut keep: impl FnMut(&ImageRecord) -> bool) -> DatasetManifest {
        DatasetManifest {
            name: self.name.clone(),
            schema: self.schema.clone(),
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, d: Option<usize>, e: Option<usize>) -> ImageRecord {
        ImageRecord {
            image_id: id.into(),
            image_path: format!("{id}.png"),
            modality: Modality::Dermoscopic,
            diagnosis: d.map(DiagnosisLabel),
            elevation: e.map(ElevationLabel),
        }
    }

    #[test]
    fn derm7pt_grouping_maps_raw_labels() {
        let s = LabelSchema::derm7pt();
        assert_eq!(s.group_diagnosis("basal cell carcinoma").unwrap(), DiagnosisLabel(0));
        assert_eq!(s.group_diagnosis("reed or spitz nevus").unwrap(), DiagnosisLabel(2));
        assert!(matches!(s.group_diagnosis("wart"), Err(Error::UnknownLabel { .. })));
        assert_eq!(s.elevation_classes, ["flat", "palpable", "nodular"]);
        assert_eq!(s.diagnosis_classes, ["BCC", "MEL", "NEV", "SK", "MISC"]);
    }

    #[test]
    fn schema_rejects_repeats_and_dangling_groups() {
        let mut g = BTreeMap::new();
        assert!(LabelSchema::new(vec!["a".into(), "a".into()], vec!["x".into()], g.clone()).is_err());
        assert!(LabelSchema::new(vec![], vec!["x".into()], g.clone()).is_err());
        g.insert("raw".into(), "b".into());
        assert!(LabelSchema::new(vec!["a".into()], vec!["x".into()], g).is_err());
    }

    #[test]
    fn manifest_rejects_duplicate_ids() {
        let err = DatasetManifest::new("m", LabelSchema::derm7pt(), vec![rec("a", None, None), rec("a", None, None)])
            .unwrap_err();
        assert_eq!(err, Error::DuplicateImageId("a".into()));
    }

    #[test]
    fn counts_and_drop_unlabeled() {
        let mut m = DatasetManifest::new(
            "m",
            LabelSchema::derm7pt(),
            vec![rec("a", Some(0), Some(2)), rec("b", Some(1), None), rec("c", None, Some(2))],
        )
        .unwrap();
        assert_eq!(m.class_counts(LabelKind::Elevation), vec![0, 0, 2]);
        assert_eq!(m.drop_unlabeled(LabelKind::Elevation), 1);
        assert_eq!(m.len(), 2);
        assert_eq!(m.modality(), Some(Modality::Dermoscopic));
    }
}
