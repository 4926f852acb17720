//! Whole-tumor overlap metrics.
//!
//! Masks are binarized before counting: any nonzero label is tumor.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::nifti::read_nifti;
use crate::volume::Volume;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("prediction shape {pred:?} differs from ground truth shape {gt:?}")]
    ShapeMismatch { pred: [usize; 3], gt: [usize; 3] },
    #[error("no pairs to evaluate")]
    EmptyBatch,
    #[error("all {0} pairs failed to evaluate")]
    NoValidPairs(usize),
}

/// Voxel tallies of a binary comparison.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Dice as the exact fraction `(2·tp, 2·tp + fn + fp)`.
    pub fn dice_fraction(&self) -> (u64, u64) {
        (2 * self.tp, 2 * self.tp + self.fn_ + self.fp)
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

/// Counts agreement between a predicted and a reference mask.
pub fn confusion(pred: &Volume, gt: &Volume) -> Result<ConfusionCounts, MetricsError> {
    if pred.shape() != gt.shape() {
        return Err(MetricsError::ShapeMismatch {
            pred: pred.shape(),
            gt: gt.shape(),
        });
    }
    let (p, g) = (pred.data(), gt.data());
    let mut c = ConfusionCounts::default();
    for i in 0..pred.len() {
        match (p.is_nonzero(i), g.is_nonzero(i)) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// `2·tp / (2·tp + fn + fp)`, and 1 when both masks are empty.
pub fn dice(c: &ConfusionCounts) -> f64 {
    let (num, den) = c.dice_fraction();
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

pub fn dice_loss(c: &ConfusionCounts) -> f64 {
    1.0 - dice(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeScore {
    pub id: String,
    pub dice: f64,
    pub counts: ConfusionCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFailure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceReport {
    pub per_volume: Vec<VolumeScore>,
    pub mean_dice: f64,
    pub counts: ConfusionCounts,
    pub failures: Vec<PairFailure>,
}

impl DiceReport {
    /// `id,dice` rows followed by a `mean` summary row.
    pub fn to_csv(&self) -> String {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["id", "dice"]).unwrap();
        for s in &self.per_volume {
            wtr.write_record([s.id.as_str(), &s.dice.to_string()])
                .unwrap();
        }
        wtr.write_record(["mean", &self.mean_dice.to_string()])
            .unwrap();
        String::from_utf8(wtr.into_inner().expect("in-memory writer")).expect("utf-8 csv")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "volumes:   {}", self.per_volume.len());
        let _ = writeln!(s, "failures:  {}", self.failures.len());
        let _ = write!(s, "mean dice: {:.4}", self.mean_dice);
        s
    }
}

/// Scores in-memory pairs. Pairs whose masks disagree in shape are recorded
/// as failures.
pub fn evaluate_volumes<'a>(
    pairs: impl IntoIterator<Item = (String, &'a Volume, &'a Volume)>,
) -> Result<DiceReport, MetricsError> {
    collect_report(
        pairs
            .into_iter()
            .map(|(id, p, g)| (id, confusion(p, g).map_err(|e| e.to_string()))),
    )
}

/// Loads and scores `(id, prediction path, ground truth path)` triples.
/// Load and shape errors are collected per pair rather than aborting.
pub fn evaluate_batch(pairs: &[(String, PathBuf, PathBuf)]) -> Result<DiceReport, MetricsError> {
    collect_report(pairs.iter().map(|(id, pred_path, gt_path)| {
        let counts = (|| {
            let pred = read_nifti(pred_path).map_err(|e| e.to_string())?;
            let gt = read_nifti(gt_path).map_err(|e| e.to_string())?;
            confusion(pred.volume(), gt.volume()).map_err(|e| e.to_string())
        })();
        (id.clone(), counts)
    }))
}

fn collect_report(
    results: impl Iterator<Item = (String, Result<ConfusionCounts, String>)>,
) -> Result<DiceReport, MetricsError> {
    let mut per_volume = Vec::new();
    let mut failures = Vec::new();
    for (id, result) in results {
        match result {
            Ok(counts) => per_volume.push(VolumeScore {
                id,
                dice: dice(&counts),
                counts,
            }),
            Err(error) => {
                log::warn!("{id}: {error}");
                failures.push(PairFailure { id, error });
            }
        }
    }
    if per_volume.is_empty() {
        return Err(if failures.is_empty() {
            MetricsError::EmptyBatch
        } else {
            MetricsError::NoValidPairs(failures.len())
        });
    }
    let mean_dice = per_volume.iter().map(|s| s.dice).sum::<f64>() / per_volume.len() as f64;
    let counts = per_volume
        .iter()
        .fold(ConfusionCounts::default(), |acc, s| acc + s.counts);
    Ok(DiceReport {
        per_volume,
        mean_dice,
        counts,
        failures,
    })
}
