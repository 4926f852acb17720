//! Discovery of patients in a BraTS-style directory tree.
//!
//! The default layout is `<root>/<grade>/<patient_id>/<patient_id>_<modality>.nii.gz`
//! where `grade` is `HGG` or `LGG` and `modality` one of `flair`, `t1`, `t2`,
//! `t1ce` or `seg`. The file name inside a patient folder comes from a
//! pattern with `{patient}` and `{modality}` placeholders.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::volume::Modality;

pub const DEFAULT_PATTERN: &str = "{patient}_{modality}.nii.gz";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Grade {
    #[serde(rename = "HGG")]
    Hgg,
    #[serde(rename = "LGG")]
    Lgg,
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grade::Hgg => "HGG",
            Grade::Lgg => "LGG",
        })
    }
}

impl FromStr for Grade {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "HGG" => Ok(Grade::Hgg),
            "LGG" => Ok(Grade::Lgg),
            other => Err(format!("unknown grade `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientEntry {
    pub patient_id: String,
    pub grade: Grade,
    pub channel_paths: BTreeMap<Modality, PathBuf>,
    pub ground_truth_path: Option<PathBuf>,
}

/// A patient folder that was left out of the index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedPatient {
    pub patient_id: String,
    pub grade: Grade,
    pub missing: Vec<Modality>,
}

impl fmt::Display for SkippedPatient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let missing: Vec<_> = self.missing.iter().map(|m| m.token()).collect();
        write!(
            f,
            "{}/{}: missing {}",
            self.grade,
            self.patient_id,
            missing.join(", ")
        )
    }
}

/// Complete patients, sorted by grade then id, plus the skipped ones.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetIndex {
    pub patients: Vec<PatientEntry>,
    pub skipped: Vec<SkippedPatient>,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn by_grade(&self, grade: Grade) -> impl Iterator<Item = &PatientEntry> {
        self.patients.iter().filter(move |p| p.grade == grade)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("no complete patients under {0}")]
    EmptyDataset(PathBuf),
    #[error("file pattern `{0}` must contain a {{modality}} placeholder")]
    BadPattern(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Naming convention for files inside a patient folder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetLayout {
    pattern: String,
}

impl Default for DatasetLayout {
    fn default() -> Self {
        DatasetLayout {
            pattern: DEFAULT_PATTERN.to_string(),
        }
    }
}

impl DatasetLayout {
    pub fn new(pattern: impl Into<String>) -> Result<Self, DatasetError> {
        let pattern = pattern.into();
        if !pattern.contains("{modality}") {
            return Err(DatasetError::BadPattern(pattern));
        }
        Ok(DatasetLayout { pattern })
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    pub fn file_name(&self, patient_id: &str, modality: Modality) -> String {
        self.pattern
            .replace("{patient}", patient_id)
            .replace("{modality}", modality.token())
    }

    pub fn patient_dir(root: &Path, grade: Grade, patient_id: &str) -> PathBuf {
        root.join(grade.to_string()).join(patient_id)
    }

    pub fn path(&self, root: &Path, grade: Grade, patient_id: &str, modality: Modality) -> PathBuf {
        Self::patient_dir(root, grade, patient_id).join(self.file_name(patient_id, modality))
    }
}

/// Scans `root` with the default layout.
pub fn scan_dataset(root: impl AsRef<Path>) -> Result<DatasetIndex, DatasetError> {
    scan_dataset_with(root, &DatasetLayout::default())
}

/// Indexes every patient that has all four channels. Incomplete patients are
/// logged and listed in [`DatasetIndex::skipped`].
pub fn scan_dataset_with(
    root: impl AsRef<Path>,
    layout: &DatasetLayout,
) -> Result<DatasetIndex, DatasetError> {
    let root = root.as_ref();
    let mut index = DatasetIndex::default();
    for grade_dir in sorted_dirs(root)? {
        let Some(grade) = dir_name(&grade_dir).and_then(|n| n.parse::<Grade>().ok()) else {
            continue;
        };
        for patient_dir in sorted_dirs(&grade_dir)? {
            let Some(patient_id) = dir_name(&patient_dir) else {
                continue;
            };
            let mut channel_paths = BTreeMap::new();
            let mut missing = Vec::new();
            for m in Modality::CHANNELS {
                let p = patient_dir.join(layout.file_name(&patient_id, m));
                if p.is_file() {
                    channel_paths.insert(m, p);
                } else {
                    missing.push(m);
                }
            }
            if !missing.is_empty() {
                let skipped = SkippedPatient {
                    patient_id,
                    grade,
                    missing,
                };
                log::warn!("skipping incomplete patient {skipped}");
                index.skipped.push(skipped);
                continue;
            }
            let gt = patient_dir.join(layout.file_name(&patient_id, Modality::Mask));
            index.patients.push(PatientEntry {
                patient_id,
                grade,
                channel_paths,
                ground_truth_path: gt.is_file().then_some(gt),
            });
        }
    }
    if index.patients.is_empty() {
        return Err(DatasetError::EmptyDataset(root.to_path_buf()));
    }
    Ok(index)
}

fn dir_name(p: &Path) -> Option<String> {
    p.file_name().map(|n| n.to_string_lossy().into_owned())
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut dirs = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let path = entry.map_err(io_err)?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}
