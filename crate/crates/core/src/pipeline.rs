//! The preprocessing chain: embedding, slice removal, center crop,
//! percentile clipping and z-score normalization.
//!
//! Embedding and slice removal may run in either order. Both orders compute
//! identical voxels because slice selection commutes with voxel-wise fusion;
//! they differ only in how much data the slice stage touches, which the
//! per-stage [`StageRecord`]s make visible.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::embedding::{embed, EmbedConfig, EmbedError, ModalitySet};
use crate::volume::{Modality, Volume, VoxelData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum StageOrder {
    /// Fuse the full-depth channels, then cut the slice window once.
    #[default]
    #[serde(rename = "embed-first")]
    EmbedThenSlice,
    /// Cut the slice window from every channel, then fuse.
    #[serde(rename = "slice-first")]
    SliceThenEmbed,
}

impl StageOrder {
    pub const BOTH: [StageOrder; 2] = [StageOrder::EmbedThenSlice, StageOrder::SliceThenEmbed];

    pub fn label(self) -> &'static str {
        match self {
            StageOrder::EmbedThenSlice => "embed-first",
            StageOrder::SliceThenEmbed => "slice-first",
        }
    }
}

impl fmt::Display for StageOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for StageOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "embed-first" | "embed-then-slice" => Ok(StageOrder::EmbedThenSlice),
            "slice-first" | "slice-then-embed" => Ok(StageOrder::SliceThenEmbed),
            other => Err(format!(
                "unknown order `{other}` (expected embed-first or slice-first)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub slice_lo: usize,
    /// Exclusive upper slice bound unless `slice_inclusive` is set.
    pub slice_hi: usize,
    pub slice_inclusive: bool,
    /// Center-crop target `(width, height)`.
    pub target_shape: [usize; 2],
    pub clip_percentiles: [f64; 2],
    pub normalize: bool,
    pub order: StageOrder,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            slice_lo: 30,
            slice_hi: 120,
            slice_inclusive: false,
            target_shape: [192, 192],
            clip_percentiles: [1.0, 99.0],
            normalize: true,
            order: StageOrder::EmbedThenSlice,
        }
    }
}

impl PipelineConfig {
    pub fn with_order(mut self, order: StageOrder) -> Self {
        self.order = order;
        self
    }

    /// The half-open slice window `[lo, hi)` actually kept.
    pub fn slice_range(&self) -> (usize, usize) {
        let hi = if self.slice_inclusive {
            self.slice_hi + 1
        } else {
            self.slice_hi
        };
        (self.slice_lo, hi)
    }

    pub fn output_shape(&self) -> [usize; 3] {
        let (lo, hi) = self.slice_range();
        [
            self.target_shape[0],
            self.target_shape[1],
            hi.saturating_sub(lo),
        ]
    }

    /// Checks the configuration against an input volume shape.
    pub fn validate(&self, shape: [usize; 3]) -> Result<(), PipelineError> {
        let (lo, hi) = self.slice_range();
        if lo >= hi || hi > shape[2] {
            return Err(PipelineError::RangeOutOfBounds {
                lo,
                hi,
                depth: shape[2],
            });
        }
        check_crop(shape, self.target_shape)?;
        check_percentiles(self.clip_percentiles[0], self.clip_percentiles[1])
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("slice window [{lo}, {hi}) outside depth {depth}")]
    RangeOutOfBounds { lo: usize, hi: usize, depth: usize },
    #[error("crop target {target:?} exceeds in-plane size {actual:?}")]
    TargetTooLarge {
        target: [usize; 2],
        actual: [usize; 2],
    },
    #[error("percentiles ({0}, {1}) must satisfy 0 < lo < hi < 100")]
    InvalidPercentiles(f64, f64),
    #[error("volume has no nonzero (brain) voxels")]
    AllZeroVolume,
    #[error("nonzero voxels have zero standard deviation")]
    DegenerateStd,
    #[error("ground truth shape {gt:?} differs from input shape {input:?}")]
    GroundTruthShape { gt: [usize; 3], input: [usize; 3] },
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Keeps slices `[lo, hi)` along z, preserving spacing and tag.
pub fn slice_window(v: &Volume, lo: usize, hi: usize) -> Result<Volume, PipelineError> {
    let [nx, ny, nz] = v.shape();
    if lo >= hi || hi > nz {
        return Err(PipelineError::RangeOutOfBounds { lo, hi, depth: nz });
    }
    Ok(v.extract_box(0, nx, 0, ny, lo, hi))
}

/// Low-side offsets of a center crop: `floor((n - target) / 2)` per axis.
pub fn crop_offsets(shape: [usize; 3], target: [usize; 2]) -> Result<[usize; 2], PipelineError> {
    check_crop(shape, target)?;
    Ok([(shape[0] - target[0]) / 2, (shape[1] - target[1]) / 2])
}

/// Center crop in the x/y plane; depth unchanged.
pub fn spatial_crop(v: &Volume, target: [usize; 2]) -> Result<Volume, PipelineError> {
    let [x0, y0] = crop_offsets(v.shape(), target)?;
    Ok(v.extract_box(x0, target[0], y0, target[1], 0, v.shape()[2]))
}

/// Linear-interpolation percentile of an ascending slice (`p` in `[0, 100]`).
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Same as [`percentile_sorted`] but on unsorted data, reordering `values`.
fn percentile_select(values: &mut [f64], p: f64) -> f64 {
    let rank = p / 100.0 * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let (_, &mut below, above) = values.select_nth_unstable_by(lo, f64::total_cmp);
    let next = above
        .iter()
        .copied()
        .min_by(f64::total_cmp)
        .unwrap_or(below);
    below + (rank - lo as f64) * (next - below)
}

fn nonzero_values(v: &Volume) -> Vec<f64> {
    let d = v.data();
    (0..v.len())
        .filter(|&i| d.is_nonzero(i))
        .map(|i| d.get_f64(i))
        .collect()
}

/// Clamps nonzero voxels to their `[p_lo, p_hi]` percentile band. Background
/// zeros are untouched. The result is `F32`.
pub fn clip_percentiles(v: &Volume, p_lo: f64, p_hi: f64) -> Result<Volume, PipelineError> {
    check_percentiles(p_lo, p_hi)?;
    let mut values = nonzero_values(v);
    if values.is_empty() {
        return Err(PipelineError::AllZeroVolume);
    }
    let lo = percentile_select(&mut values, p_lo);
    let hi = percentile_select(&mut values, p_hi);
    let d = v.data();
    let out = (0..v.len())
        .map(|i| {
            if d.is_nonzero(i) {
                d.get_f64(i).clamp(lo, hi) as f32
            } else {
                0.0
            }
        })
        .collect();
    Ok(v.with_data(VoxelData::F32(out)))
}

/// Mean and population standard deviation over nonzero voxels.
pub fn brain_stats(v: &Volume) -> Result<(f64, f64), PipelineError> {
    let d = v.data();
    let mut count = 0usize;
    let mut sum = 0.0f64;
    for i in 0..v.len() {
        if d.is_nonzero(i) {
            count += 1;
            sum += d.get_f64(i);
        }
    }
    if count == 0 {
        return Err(PipelineError::AllZeroVolume);
    }
    let mean = sum / count as f64;
    let mut ss = 0.0f64;
    for i in 0..v.len() {
        if d.is_nonzero(i) {
            let dev = d.get_f64(i) - mean;
            ss += dev * dev;
        }
    }
    Ok((mean, (ss / count as f64).sqrt()))
}

/// `(x - μ) / σ` on nonzero voxels; zeros stay zero. The result is `F32`.
pub fn zscore_normalize(v: &Volume) -> Result<Volume, PipelineError> {
    let (mean, std) = brain_stats(v)?;
    if std == 0.0 {
        return Err(PipelineError::DegenerateStd);
    }
    let d = v.data();
    let out = (0..v.len())
        .map(|i| {
            if d.is_nonzero(i) {
                ((d.get_f64(i) - mean) / std) as f32
            } else {
                0.0
            }
        })
        .collect();
    Ok(v.with_data(VoxelData::F32(out)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Embed,
    SliceWindow,
    Crop,
    Clip,
    Normalize,
    MaskSliceWindow,
    MaskCrop,
}

/// Cost of one stage. Element counts tally every voxel read or written by
/// a pass over volume data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub passes: u32,
    pub elements_read: u64,
    pub elements_written: u64,
    pub duration_ms: f64,
}

impl StageRecord {
    pub fn element_ops(&self) -> u64 {
        self.elements_read + self.elements_written
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub modalities: Vec<Modality>,
    pub pipeline: PipelineConfig,
    pub embed: EmbedConfig,
    pub stages: Vec<StageRecord>,
}

impl Provenance {
    pub fn stage(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    /// Element ops of all stages, ground truth included.
    pub fn element_ops(&self) -> u64 {
        self.stages.iter().map(StageRecord::element_ops).sum()
    }

    pub fn stage_ops(&self, stage: Stage) -> u64 {
        self.stage(stage).map_or(0, StageRecord::element_ops)
    }

    pub fn total_ms(&self) -> f64 {
        self.stages.iter().map(|r| r.duration_ms).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedSample {
    pub embedded: Volume,
    pub ground_truth: Option<Volume>,
    pub provenance: Provenance,
}

struct Recorder {
    stages: Vec<StageRecord>,
}

impl Recorder {
    fn run<T>(
        &mut self,
        stage: Stage,
        passes: u32,
        read: usize,
        written: usize,
        f: impl FnOnce() -> Result<T, PipelineError>,
    ) -> Result<T, PipelineError> {
        let start = Instant::now();
        let out = f()?;
        self.stages.push(StageRecord {
            stage,
            passes,
            elements_read: read as u64,
            elements_written: written as u64,
            duration_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        Ok(out)
    }
}

/// Runs the full chain on one patient.
///
/// The ground truth, when given, only goes through the slice window and the
/// crop, so its labels are never altered.
pub fn run_pipeline(
    set: &ModalitySet,
    ground_truth: Option<&Volume>,
    pcfg: &PipelineConfig,
    ecfg: &EmbedConfig,
) -> Result<PreprocessedSample, PipelineError> {
    let shape = set.shape();
    pcfg.validate(shape)?;
    if let Some(gt) = ground_truth {
        if gt.shape() != shape {
            return Err(PipelineError::GroundTruthShape {
                gt: gt.shape(),
                input: shape,
            });
        }
    }
    let (lo, hi) = pcfg.slice_range();
    let k = set.len();
    let full = shape.iter().product::<usize>();
    let window = shape[0] * shape[1] * (hi - lo);
    let [w, h] = pcfg.target_shape;
    let cropped = w * h * (hi - lo);
    let mut rec = Recorder { stages: Vec::new() };

    let sliced = match pcfg.order {
        StageOrder::EmbedThenSlice => {
            let fused = rec.run(Stage::Embed, 1, k * full, full, || Ok(embed(set, ecfg)?))?;
            rec.run(Stage::SliceWindow, 1, window, window, || {
                slice_window(&fused, lo, hi)
            })?
        }
        StageOrder::SliceThenEmbed => {
            let windowed = rec.run(Stage::SliceWindow, k as u32, k * window, k * window, || {
                let members = set
                    .iter()
                    .map(|(m, v)| slice_window(v, lo, hi).map(|s| (m, s)))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(ModalitySet::new(members)?)
            })?;
            rec.run(Stage::Embed, 1, k * window, window, || {
                Ok(embed(&windowed, ecfg)?)
            })?
        }
    };
    let cropped_vol = rec.run(Stage::Crop, 1, cropped, cropped, || {
        spatial_crop(&sliced, pcfg.target_shape)
    })?;
    drop(sliced);
    let [p_lo, p_hi] = pcfg.clip_percentiles;
    // One pass gathers brain voxels, one applies the clamp.
    let mut embedded = rec.run(Stage::Clip, 2, 2 * cropped, cropped, || {
        clip_percentiles(&cropped_vol, p_lo, p_hi)
    })?;
    drop(cropped_vol);
    if pcfg.normalize {
        // Mean pass, variance pass, apply pass.
        embedded = rec.run(Stage::Normalize, 3, 3 * cropped, cropped, || {
            zscore_normalize(&embedded)
        })?;
    }

    let ground_truth = match ground_truth {
        Some(gt) => {
            let gt_window = rec.run(Stage::MaskSliceWindow, 1, window, window, || {
                slice_window(gt, lo, hi)
            })?;
            let gt_crop = rec.run(Stage::MaskCrop, 1, cropped, cropped, || {
                spatial_crop(&gt_window, pcfg.target_shape)
            })?;
            Some(gt_crop.with_modality(Modality::Mask))
        }
        None => None,
    };

    Ok(PreprocessedSample {
        embedded,
        ground_truth,
        provenance: Provenance {
            modalities: set.modalities(),
            pipeline: pcfg.clone(),
            embed: ecfg.clone(),
            stages: rec.stages,
        },
    })
}

fn check_crop(shape: [usize; 3], target: [usize; 2]) -> Result<(), PipelineError> {
    if target[0] == 0 || target[1] == 0 || target[0] > shape[0] || target[1] > shape[1] {
        return Err(PipelineError::TargetTooLarge {
            target,
            actual: [shape[0], shape[1]],
        });
    }
    Ok(())
}

fn check_percentiles(p_lo: f64, p_hi: f64) -> Result<(), PipelineError> {
    if !(0.0 < p_lo && p_lo < p_hi && p_hi < 100.0) {
        return Err(PipelineError::InvalidPercentiles(p_lo, p_hi));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sequential_slices(shape: [usize; 3]) -> Volume {
        let n = shape[0] * shape[1];
        Volume::from_f32(
            shape,
            (0..shape.iter().product::<usize>())
                .map(|i| (i / n) as f32)
                .collect(),
        )
        .unwrap()
    }

    fn indexed_grid(nx: usize, ny: usize) -> Volume {
        Volume::from_f32([nx, ny, 1], (0..nx * ny).map(|i| i as f32).collect()).unwrap()
    }

    #[test]
    fn slice_window_depth_and_content() {
        let v = sequential_slices([2, 2, 155]);
        let out = slice_window(&v, 30, 120).unwrap();
        assert_eq!(out.shape(), [2, 2, 90]);
        assert_eq!(out.get_f64(0, 0, 0), 30.0);
        assert_eq!(out.get_f64(1, 1, 89), 119.0);
        let one = slice_window(&v, 5, 6).unwrap();
        assert_eq!(one.as_f32().unwrap(), &[5.0; 4]);
        assert_eq!(slice_window(&v, 0, 155).unwrap(), v);
    }

    #[test]
    fn slice_window_bounds() {
        let v = sequential_slices([1, 1, 10]);
        for (lo, hi) in [(5, 5), (6, 5), (0, 11)] {
            assert!(matches!(
                slice_window(&v, lo, hi),
                Err(PipelineError::RangeOutOfBounds { .. })
            ));
        }
    }

    #[test]
    fn crop_offsets_brats() {
        assert_eq!(crop_offsets([240, 240, 155], [192, 192]).unwrap(), [24, 24]);
        assert_eq!(crop_offsets([7, 6, 1], [4, 4]).unwrap(), [1, 1]);
    }

    #[test]
    fn crop_five_to_two_keeps_rows_and_cols_one_two() {
        let v = indexed_grid(5, 5);
        let out = spatial_crop(&v, [2, 2]).unwrap();
        // rows/cols {1, 2}: indices y*5 + x
        assert_eq!(out.as_f32().unwrap(), &[6.0, 7.0, 11.0, 12.0]);
        assert_eq!(spatial_crop(&v, [5, 5]).unwrap(), v);
        assert!(matches!(
            spatial_crop(&v, [6, 5]),
            Err(PipelineError::TargetTooLarge { .. })
        ));
    }

    #[test]
    fn percentile_helpers_agree() {
        let sorted: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((percentile_sorted(&sorted, 1.0) - 1.99).abs() < 1e-12);
        assert!((percentile_sorted(&sorted, 99.0) - 99.01).abs() < 1e-12);
        let mut shuffled: Vec<f64> = sorted.iter().rev().copied().collect();
        for p in [0.0, 1.0, 37.5, 99.0, 100.0] {
            assert_eq!(
                percentile_select(&mut shuffled, p),
                percentile_sorted(&sorted, p)
            );
        }
    }

    #[test]
    fn clipping_constant_volume_is_identity() {
        let v = Volume::from_f32([2, 2, 2], vec![0.0, 3.0, 3.0, 0.0, 3.0, 3.0, 3.0, 3.0]).unwrap();
        assert_eq!(clip_percentiles(&v, 1.0, 99.0).unwrap(), v);
        let zeros = Volume::from_f32([2, 1, 1], vec![0.0; 2]).unwrap();
        assert!(matches!(
            clip_percentiles(&zeros, 1.0, 99.0),
            Err(PipelineError::AllZeroVolume)
        ));
        assert!(matches!(
            clip_percentiles(&v, 50.0, 50.0),
            Err(PipelineError::InvalidPercentiles(..))
        ));
    }

    #[test]
    fn zscore_hand_example() {
        let vals = [0.0, 2.0, 4.0, 4.0, 0.0, 4.0, 5.0, 5.0, 7.0, 9.0];
        let v = Volume::from_f32([10, 1, 1], vals.to_vec()).unwrap();
        let out = zscore_normalize(&v).unwrap();
        assert_eq!(
            out.as_f32().unwrap(),
            &[0.0, -1.5, -0.5, -0.5, 0.0, -0.5, 0.0, 0.0, 1.0, 2.0]
        );
        let constant = Volume::from_f32([3, 1, 1], vec![0.0, 4.0, 4.0]).unwrap();
        assert!(matches!(
            zscore_normalize(&constant),
            Err(PipelineError::DegenerateStd)
        ));
    }

    #[test]
    fn config_validation() {
        let cfg = PipelineConfig::default();
        assert!(cfg.validate([240, 240, 155]).is_ok());
        assert!(matches!(
            cfg.validate([240, 240, 100]),
            Err(PipelineError::RangeOutOfBounds { .. })
        ));
        assert!(matches!(
            cfg.validate([100, 240, 155]),
            Err(PipelineError::TargetTooLarge { .. })
        ));
        let inclusive = PipelineConfig {
            slice_inclusive: true,
            ..PipelineConfig::default()
        };
        assert_eq!(inclusive.output_shape(), [192, 192, 91]);
        assert_eq!(cfg.output_shape(), [192, 192, 90]);
    }

    #[test]
    fn order_parses_from_cli_spelling() {
        assert_eq!(
            "embed-first".parse::<StageOrder>().unwrap(),
            StageOrder::EmbedThenSlice
        );
        assert_eq!(
            "slice-first".parse::<StageOrder>().unwrap(),
            StageOrder::SliceThenEmbed
        );
        assert!("sideways".parse::<StageOrder>().is_err());
    }
}
