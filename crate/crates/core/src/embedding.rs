//! Pixel-level fusion of co-registered modalities into a single volume.
//!
//! Per voxel the embedded value is `(Σ wᵢ·Mᵢ) / N + c`. Three arithmetic
//! modes are available:
//!
//! * [`EmbedMode::RealValued`] evaluates the formula in `f64` and stores `f32`.
//! * [`EmbedMode::WrappingU8`] adds each weighted term modulo 256 (array
//!   addition on `uint8` buffers), then floor-divides by `N` and adds
//!   `round(c)` modulo 256.
//! * [`EmbedMode::SaturatingU8`] clamps every partial sum to `[0, 255]`
//!   (saturating image addition), then floor-divides by `N` and adds
//!   `round(c)` with saturation.
//!
//! In the integer modes a weight other than 1 produces the term
//! `round_half_even(w·x)` before accumulation.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::volume::{ElementKind, Modality, Volume, VoxelData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedMode {
    #[default]
    RealValued,
    WrappingU8,
    SaturatingU8,
}

impl fmt::Display for EmbedMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbedMode::RealValued => "real-valued",
            EmbedMode::WrappingU8 => "wrapping-u8",
            EmbedMode::SaturatingU8 => "saturating-u8",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub weights: BTreeMap<Modality, f64>,
    pub offset_c: f64,
    /// Divisor `N`; the number of participating modalities when unset.
    pub divisor_n: Option<u32>,
    pub mode: EmbedMode,
}

impl Default for EmbedConfig {
    /// Unit weights for all four channels, no offset.
    fn default() -> Self {
        EmbedConfig {
            weights: Modality::CHANNELS.iter().map(|&m| (m, 1.0)).collect(),
            offset_c: 0.0,
            divisor_n: None,
            mode: EmbedMode::RealValued,
        }
    }
}

impl EmbedConfig {
    pub fn with_mode(mut self, mode: EmbedMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_offset(mut self, c: f64) -> Self {
        self.offset_c = c;
        self
    }

    pub fn with_weight(mut self, modality: Modality, w: f64) -> Self {
        self.weights.insert(modality, w);
        self
    }

    pub fn with_divisor(mut self, n: u32) -> Self {
        self.divisor_n = Some(n);
        self
    }

    pub fn divisor_for(&self, members: usize) -> u32 {
        self.divisor_n.unwrap_or(members as u32)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("a modality set needs 2 to 4 channels, got {0}")]
    MemberCount(usize),
    #[error("{0} is not an acquisition channel")]
    NotAChannel(Modality),
    #[error("{0} appears more than once")]
    DuplicateModality(Modality),
    #[error("{modality} has shape {actual:?}, expected {expected:?}")]
    ShapeMismatch {
        modality: Modality,
        expected: [usize; 3],
        actual: [usize; 3],
    },
    #[error("{modality} has spacing {actual:?}, expected {expected:?}")]
    SpacingMismatch {
        modality: Modality,
        expected: [f32; 3],
        actual: [f32; 3],
    },
    #[error("{modality} has element kind {actual}, expected {expected}")]
    KindMismatch {
        modality: Modality,
        expected: ElementKind,
        actual: ElementKind,
    },
    #[error("mode {mode} needs uint8 inputs, got {kind}")]
    ModeKindConflict { mode: EmbedMode, kind: ElementKind },
    #[error("no weight configured for {0}")]
    MissingWeight(Modality),
    #[error("weight for {0} is not finite")]
    NonFiniteWeight(Modality),
    #[error("divisor N must be at least 1")]
    ZeroDivisor,
}

/// Two to four co-registered channels of one patient, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalitySet {
    members: Vec<(Modality, Volume)>,
}

impl ModalitySet {
    pub fn new(members: Vec<(Modality, Volume)>) -> Result<Self, EmbedError> {
        if !(2..=4).contains(&members.len()) {
            return Err(EmbedError::MemberCount(members.len()));
        }
        let (_, first) = &members[0];
        let (shape, spacing, kind) = (first.shape(), first.spacing(), first.kind());
        for (i, (m, v)) in members.iter().enumerate() {
            if !m.is_channel() {
                return Err(EmbedError::NotAChannel(*m));
            }
            if members[..i].iter().any(|(other, _)| other == m) {
                return Err(EmbedError::DuplicateModality(*m));
            }
            if v.shape() != shape {
                return Err(EmbedError::ShapeMismatch {
                    modality: *m,
                    expected: shape,
                    actual: v.shape(),
                });
            }
            if v.spacing() != spacing {
                return Err(EmbedError::SpacingMismatch {
                    modality: *m,
                    expected: spacing,
                    actual: v.spacing(),
                });
            }
            if v.kind() != kind {
                return Err(EmbedError::KindMismatch {
                    modality: *m,
                    expected: kind,
                    actual: v.kind(),
                });
            }
        }
        Ok(ModalitySet { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn shape(&self) -> [usize; 3] {
        self.members[0].1.shape()
    }

    pub fn kind(&self) -> ElementKind {
        self.members[0].1.kind()
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.members.iter().map(|(m, _)| *m).collect()
    }

    pub fn get(&self, modality: Modality) -> Option<&Volume> {
        self.members
            .iter()
            .find(|(m, _)| *m == modality)
            .map(|(_, v)| v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Modality, &Volume)> {
        self.members.iter().map(|(m, v)| (*m, v))
    }

    /// The same members in a different order; `order[i]` indexes the current
    /// members.
    pub fn reordered(&self, order: &[usize]) -> Result<ModalitySet, EmbedError> {
        ModalitySet::new(order.iter().map(|&i| self.members[i].clone()).collect())
    }
}

/// Fuses the members of `set` under `cfg`. The result carries the
/// [`Modality::Embedded`] tag and the members' geometry; it is `F32` in
/// real-valued mode and `U8` otherwise.
pub fn embed(set: &ModalitySet, cfg: &EmbedConfig) -> Result<Volume, EmbedError> {
    let mut weights = Vec::with_capacity(set.len());
    for (m, _) in set.iter() {
        let w = *cfg.weights.get(&m).ok_or(EmbedError::MissingWeight(m))?;
        if !w.is_finite() {
            return Err(EmbedError::NonFiniteWeight(m));
        }
        weights.push(w);
    }
    let divisor = cfg.divisor_for(set.len());
    if divisor == 0 {
        return Err(EmbedError::ZeroDivisor);
    }
    let template = &set.members[0].1;
    let data = match cfg.mode {
        EmbedMode::RealValued => VoxelData::F32(embed_real(set, &weights, divisor, cfg.offset_c)),
        mode @ (EmbedMode::WrappingU8 | EmbedMode::SaturatingU8) => {
            if set.kind() != ElementKind::U8 {
                return Err(EmbedError::ModeKindConflict {
                    mode,
                    kind: set.kind(),
                });
            }
            VoxelData::U8(embed_u8(
                set,
                &weights,
                divisor,
                cfg.offset_c,
                mode == EmbedMode::WrappingU8,
            ))
        }
    };
    Ok(template.with_data(data).with_modality(Modality::Embedded))
}

fn embed_real(set: &ModalitySet, weights: &[f64], divisor: u32, offset: f64) -> Vec<f32> {
    fn accumulate<T: Copy + Into<f64>>(acc: &mut [f64], src: &[T], w: f64) {
        for (a, &x) in acc.iter_mut().zip(src) {
            *a += w * x.into();
        }
    }
    let mut acc = vec![0.0f64; set.shape().iter().product()];
    for ((_, v), &w) in set.iter().zip(weights) {
        match v.data() {
            VoxelData::U8(d) => accumulate(&mut acc, d, w),
            VoxelData::I16(d) => accumulate(&mut acc, d, w),
            VoxelData::F32(d) => accumulate(&mut acc, d, w),
        }
    }
    let n = f64::from(divisor);
    acc.into_iter().map(|s| (s / n + offset) as f32).collect()
}

fn embed_u8(
    set: &ModalitySet,
    weights: &[f64],
    divisor: u32,
    offset: f64,
    wrapping: bool,
) -> Vec<u8> {
    let step = |acc: i64, term: i64| -> i64 {
        if wrapping {
            (acc + term).rem_euclid(256)
        } else {
            (acc + term).clamp(0, 255)
        }
    };
    let mut acc = vec![0i64; set.shape().iter().product()];
    for ((_, v), &w) in set.iter().zip(weights) {
        let src = v.as_u8().expect("kind checked by caller");
        if w == 1.0 {
            for (a, &x) in acc.iter_mut().zip(src) {
                *a = step(*a, i64::from(x));
            }
        } else {
            for (a, &x) in acc.iter_mut().zip(src) {
                *a = step(*a, (w * f64::from(x)).round_ties_even() as i64);
            }
        }
    }
    let n = i64::from(divisor);
    let c = offset.round_ties_even() as i64;
    acc.into_iter().map(|s| step(s / n, c) as u8).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_u8(value: u8) -> Volume {
        Volume::from_u8([2, 2, 1], vec![value; 4]).unwrap()
    }

    fn pair(a: u8, b: u8) -> ModalitySet {
        ModalitySet::new(vec![
            (Modality::Flair, constant_u8(a)),
            (Modality::T1, constant_u8(b)),
        ])
        .unwrap()
    }

    #[test]
    fn wrapping_saturating_and_real_diverge() {
        let set = pair(200, 100);
        let cfg = EmbedConfig::default();
        let wrap = embed(&set, &cfg.clone().with_mode(EmbedMode::WrappingU8)).unwrap();
        let sat = embed(&set, &cfg.clone().with_mode(EmbedMode::SaturatingU8)).unwrap();
        let real = embed(&set, &cfg).unwrap();
        assert_eq!(wrap.as_u8().unwrap(), &[22; 4]);
        assert_eq!(sat.as_u8().unwrap(), &[127; 4]);
        assert_eq!(real.as_f32().unwrap(), &[150.0; 4]);
        assert_eq!(real.modality(), Some(Modality::Embedded));
    }

    #[test]
    fn identical_members_average_to_themselves() {
        let v = Volume::from_f32([3, 1, 1], vec![1.5, -2.0, 7.25]).unwrap();
        let set =
            ModalitySet::new(Modality::CHANNELS.iter().map(|&m| (m, v.clone())).collect()).unwrap();
        let out = embed(&set, &EmbedConfig::default()).unwrap();
        assert_eq!(out.as_f32(), v.as_f32());
    }

    #[test]
    fn integer_offset_and_weights_round_half_even() {
        // 2.5·10 = 25 exactly; 0.25·10 = 2.5 rounds to 2; c = 2.5 rounds to 2.
        let set = pair(10, 10);
        let cfg = EmbedConfig::default()
            .with_mode(EmbedMode::SaturatingU8)
            .with_weight(Modality::Flair, 2.5)
            .with_weight(Modality::T1, 0.25)
            .with_offset(2.5);
        let out = embed(&set, &cfg).unwrap();
        assert_eq!(out.as_u8().unwrap()[0], (25 + 2) / 2 + 2);
    }

    #[test]
    fn saturating_offset_clamps_and_wrapping_offset_wraps() {
        let set = pair(255, 255);
        let cfg = EmbedConfig::default().with_divisor(1).with_offset(10.0);
        let sat = embed(&set, &cfg.clone().with_mode(EmbedMode::SaturatingU8)).unwrap();
        assert_eq!(sat.as_u8().unwrap()[0], 255);
        // (510 mod 256) = 254; 254 + 10 = 264 → 8
        let wrap = embed(&set, &cfg.with_mode(EmbedMode::WrappingU8)).unwrap();
        assert_eq!(wrap.as_u8().unwrap()[0], 8);
    }

    #[test]
    fn negative_weighted_terms_saturate_at_zero() {
        let set = pair(50, 20);
        let cfg = EmbedConfig::default()
            .with_mode(EmbedMode::SaturatingU8)
            .with_weight(Modality::Flair, -1.0)
            .with_divisor(1);
        assert_eq!(embed(&set, &cfg).unwrap().as_u8().unwrap()[0], 20);
    }

    #[test]
    fn errors() {
        let u8v = constant_u8(1);
        let f32v = Volume::from_f32([2, 2, 1], vec![0.0; 4]).unwrap();
        let small = Volume::from_u8([1, 1, 1], vec![0]).unwrap();
        assert!(matches!(
            ModalitySet::new(vec![(Modality::Flair, u8v.clone())]),
            Err(EmbedError::MemberCount(1))
        ));
        assert!(matches!(
            ModalitySet::new(vec![(Modality::Flair, u8v.clone()), (Modality::T1, small)]),
            Err(EmbedError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            ModalitySet::new(vec![
                (Modality::Flair, u8v.clone()),
                (Modality::T1, f32v.clone())
            ]),
            Err(EmbedError::KindMismatch { .. })
        ));
        assert!(matches!(
            ModalitySet::new(vec![
                (Modality::Flair, u8v.clone()),
                (Modality::Flair, u8v.clone())
            ]),
            Err(EmbedError::DuplicateModality(Modality::Flair))
        ));
        assert!(matches!(
            ModalitySet::new(vec![
                (Modality::Flair, u8v.clone()),
                (Modality::Mask, u8v.clone())
            ]),
            Err(EmbedError::NotAChannel(Modality::Mask))
        ));
        let floats =
            ModalitySet::new(vec![(Modality::Flair, f32v.clone()), (Modality::T2, f32v)]).unwrap();
        assert!(matches!(
            embed(
                &floats,
                &EmbedConfig::default().with_mode(EmbedMode::WrappingU8)
            ),
            Err(EmbedError::ModeKindConflict { .. })
        ));
        let mut cfg = EmbedConfig::default();
        cfg.weights.remove(&Modality::T2);
        assert!(matches!(
            embed(&floats, &cfg),
            Err(EmbedError::MissingWeight(Modality::T2))
        ));
        assert!(matches!(
            embed(&floats, &EmbedConfig::default().with_divisor(0)),
            Err(EmbedError::ZeroDivisor)
        ));
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = EmbedConfig::default()
            .with_mode(EmbedMode::WrappingU8)
            .with_divisor(3);
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"wrapping-u8\""));
        assert!(text.contains("\"flair\""));
        assert_eq!(serde_json::from_str::<EmbedConfig>(&text).unwrap(), cfg);
    }
}
