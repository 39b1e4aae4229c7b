//! Stratified train / validation / test splits.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::data::{DatasetManifest, LabelKind};
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::UnknownLabel { column: "split", label: other.to_string() }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StratifyOn {
    Elevation,
    Diagnosis,
    None,
}

impl StratifyOn {
    pub fn name(self) -> &'static str {
        match self {
            StratifyOn::Elevation => "elevation",
            StratifyOn::Diagnosis => "diagnosis",
            StratifyOn::None => "none",
        }
    }

    pub fn kind(self) -> Option<LabelKind> {
        match self {
            StratifyOn::Elevation => Some(LabelKind::Elevation),
            StratifyOn::Diagnosis => Some(LabelKind::Diagnosis),
            StratifyOn::None => None,
        }
    }
}

impl FromStr for StratifyOn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "elevation" => Ok(StratifyOn::Elevation),
            "diagnosis" => Ok(StratifyOn::Diagnosis),
            "none" => Ok(StratifyOn::None),
            other => Err(Error::UnknownLabel { column: "stratify_on", label: other.to_string() }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitAssignment {
    pub assignments: BTreeMap<String, Split>,
    pub ratios: [f64; 3],
    pub stratify_on: StratifyOn,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn get(&self, image_id: &str) -> Option<Split> {
        self.assignments.get(image_id).copied()
    }

    /// Ids assigned to `split`, in manifest order.
    pub fn ids<'a>(&self, manifest: &'a DatasetManifest, split: Split) -> Vec<&'a str> {
        manifest
            .records()
            .iter()
            .filter(|r| self.get(&r.image_id) == Some(split))
            .map(|r| r.image_id.as_str())
            .collect()
    }

    /// The records of `manifest` assigned to `split`, in manifest order.
    pub fn subset(&self, manifest: &DatasetManifest, split: Split) -> DatasetManifest {
        manifest.filter(|r| self.get(&r.image_id) == Some(split))
    }

    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for s in self.assignments.values() {
            c[s.index()] += 1;
        }
        c
    }
}

pub fn check_ratios(ratios: [f64; 3]) -> Result<()> {
    let [a, b, c] = ratios;
    let ok = ratios.iter().all(|r| r.is_finite() && *r >= 0.0) && ((a + b + c) - 1.0).abs() <= 1e-9;
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidRatios(a, b, c))
    }
}

/// Per-split counts for a stratum of `n` records: floor of `ratio × n`,
/// then the leftover records go one each to train, val, test in that
/// priority order. Every count stays within 1 of `ratio × n`.
pub fn split_counts(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let mut counts = [0usize; 3];
    for (c, r) in counts.iter_mut().zip(ratios) {
        // Guard against 0.7 * 10 = 6.999999... style truncation.
        *c = libm::floor(r * n as f64 + 1e-9) as usize;
    }
    let mut left = n - counts.iter().sum::<usize>().min(n);
    for (c, r) in counts.iter_mut().zip(ratios) {
        if left == 0 {
            break;
        }
        if r > 0.0 {
            *c += 1;
            left -= 1;
        }
    }
    counts
}

/// Splits each stratum independently: records are shuffled with a stream
/// derived from `seed` and the stratum index, then cut by [`split_counts`].
pub fn stratified_split(
    manifest: &DatasetManifest,
    ratios: [f64; 3],
    stratify_on: StratifyOn,
    seed: u64,
) -> Result<SplitAssignment> {
    check_ratios(ratios)?;
    let strata: Vec<(String, Vec<&str>)> = match stratify_on.kind() {
        None => {
            if manifest.is_empty() {
                return Err(Error::EmptyStratum("all".to_string()));
            }
            alloc::vec![("all".to_string(), manifest.records().iter().map(|r| r.image_id.as_str()).collect())]
        }
        Some(kind) => {
            let classes = manifest.schema.classes(kind);
            let mut groups: Vec<Vec<&str>> = alloc::vec![Vec::new(); classes.len()];
            for r in manifest.records() {
                groups[r.require_label(kind)?].push(r.image_id.as_str());
            }
            if let Some(empty) = groups.iter().position(|g| g.is_empty()) {
                return Err(Error::EmptyStratum(classes[empty].clone()));
            }
            classes.iter().cloned().zip(groups).collect()
        }
    };
    let mut assignments = BTreeMap::new();
    for (i, (_, mut ids)) in strata.into_iter().enumerate() {
        Rng::derive(seed, i as u64).shuffle(&mut ids);
        let [train, val, _] = split_counts(ids.len(), ratios);
        for (j, id) in ids.into_iter().enumerate() {
            let split = if j < train {
                Split::Train
            } else if j < train + val {
                Split::Val
            } else {
                Split::Test
            };
            assignments.insert(id.to_string(), split);
        }
    }
    Ok(SplitAssignment { assignments, ratios, stratify_on, seed })
}
