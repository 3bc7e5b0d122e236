use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Healthy,
    Depressed,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Healthy => 0,
            Label::Depressed => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 { Label::Healthy } else { Label::Depressed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    F,
    M,
}

impl Gender {
    pub fn other(self) -> Gender {
        match self {
            Gender::F => Gender::M,
            Gender::M => Gender::F,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// One corpus recording: audio path plus its labels and split assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Audio path relative to the corpus directory.
    pub path: String,
    pub label: Label,
    pub gender: Gender,
    pub dataset_tag: String,
    pub split: Split,
}

fn validate(entries: &[ManifestEntry]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for e in entries {
        if !seen.insert(&e.id) {
            return Err(HarnessError::Manifest(format!("duplicate id {:?}", e.id)));
        }
    }
    Ok(())
}

/// Writes a manifest as headered CSV, one record per line.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    validate(entries)?;
    let mut w = csv::Writer::from_path(path)?;
    for e in entries {
        w.serialize(e)?;
    }
    w.flush().map_err(|source| HarnessError::Io { path: path.display().to_string(), source })?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut r = csv::Reader::from_path(path)?;
    let entries: Vec<ManifestEntry> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    validate(&entries)?;
    Ok(entries)
}
