//! Dense 3D scalar grids shared by every stage of the toolkit.
//!
//! Elements are stored x-fastest: the voxel at `(x, y, z)` lives at
//! `x + nx * (y + ny * z)`. This matches the on-disk NIfTI ordering, so
//! parsing never transposes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// MRI acquisition type, or the role a derived volume plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Flair,
    T1,
    T2,
    T1ce,
    Embedded,
    Mask,
}

impl Modality {
    /// The four acquisition channels of a BraTS patient, in table order.
    pub const CHANNELS: [Modality; 4] =
        [Modality::Flair, Modality::T1, Modality::T2, Modality::T1ce];

    /// File-name token used by the BraTS directory layout.
    pub fn token(self) -> &'static str {
        match self {
            Modality::Flair => "flair",
            Modality::T1 => "t1",
            Modality::T2 => "t2",
            Modality::T1ce => "t1ce",
            Modality::Embedded => "embedded",
            Modality::Mask => "seg",
        }
    }

    pub fn is_channel(self) -> bool {
        Self::CHANNELS.contains(&self)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Modality::Flair => "Flair",
            Modality::T1 => "T1",
            Modality::T2 => "T2",
            Modality::T1ce => "T1ce",
            Modality::Embedded => "Embedded",
            Modality::Mask => "Mask",
        };
        f.write_str(name)
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "flair" => Ok(Modality::Flair),
            "t1" => Ok(Modality::T1),
            "t2" => Ok(Modality::T2),
            "t1ce" | "t1gd" => Ok(Modality::T1ce),
            "embedded" => Ok(Modality::Embedded),
            "seg" | "mask" => Ok(Modality::Mask),
            other => Err(format!("unknown modality `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    U8,
    I16,
    F32,
}

impl ElementKind {
    pub fn bits(self) -> u16 {
        match self {
            ElementKind::U8 => 8,
            ElementKind::I16 => 16,
            ElementKind::F32 => 32,
        }
    }

    pub fn bytes(self) -> usize {
        usize::from(self.bits() / 8)
    }
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ElementKind::U8 => "uint8",
            ElementKind::I16 => "int16",
            ElementKind::F32 => "float32",
        };
        f.write_str(name)
    }
}

/// Typed voxel storage.
#[derive(Debug, Clone, PartialEq)]
pub enum VoxelData {
    U8(Vec<u8>),
    I16(Vec<i16>),
    F32(Vec<f32>),
}

impl VoxelData {
    pub fn kind(&self) -> ElementKind {
        match self {
            VoxelData::U8(_) => ElementKind::U8,
            VoxelData::I16(_) => ElementKind::I16,
            VoxelData::F32(_) => ElementKind::F32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            VoxelData::U8(v) => v.len(),
            VoxelData::I16(v) => v.len(),
            VoxelData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Value at a linear index, widened to `f64` (exact for all kinds).
    #[inline]
    pub fn get_f64(&self, i: usize) -> f64 {
        match self {
            VoxelData::U8(v) => f64::from(v[i]),
            VoxelData::I16(v) => f64::from(v[i]),
            VoxelData::F32(v) => f64::from(v[i]),
        }
    }

    #[inline]
    pub fn is_nonzero(&self, i: usize) -> bool {
        match self {
            VoxelData::U8(v) => v[i] != 0,
            VoxelData::I16(v) => v[i] != 0,
            VoxelData::F32(v) => v[i] != 0.0,
        }
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        match self {
            VoxelData::U8(v) => v.iter().map(|&x| f32::from(x)).collect(),
            VoxelData::I16(v) => v.iter().map(|&x| f32::from(x)).collect(),
            VoxelData::F32(v) => v.clone(),
        }
    }

    fn gather(&self, indices: impl Iterator<Item = std::ops::Range<usize>>) -> VoxelData {
        fn pick<T: Copy>(
            src: &[T],
            ranges: impl Iterator<Item = std::ops::Range<usize>>,
        ) -> Vec<T> {
            let mut out = Vec::new();
            for r in ranges {
                out.extend_from_slice(&src[r]);
            }
            out
        }
        match self {
            VoxelData::U8(v) => VoxelData::U8(pick(v, indices)),
            VoxelData::I16(v) => VoxelData::I16(pick(v, indices)),
            VoxelData::F32(v) => VoxelData::F32(pick(v, indices)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VolumeError {
    #[error("element count {actual} does not match shape {shape:?} ({expected} voxels)")]
    ElementCount {
        shape: [usize; 3],
        expected: usize,
        actual: usize,
    },
    #[error("shape {0:?} has a zero extent")]
    EmptyShape([usize; 3]),
    #[error("voxel spacing {0:?} must be positive and finite")]
    BadSpacing([f32; 3]),
}

/// A 3D scalar grid with voxel spacing (mm) and an optional modality tag.
///
/// Immutable once built; stages produce new volumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    shape: [usize; 3],
    spacing: [f32; 3],
    data: VoxelData,
    modality: Option<Modality>,
}

impl Volume {
    pub fn new(shape: [usize; 3], spacing: [f32; 3], data: VoxelData) -> Result<Self, VolumeError> {
        if shape.contains(&0) {
            return Err(VolumeError::EmptyShape(shape));
        }
        let expected = shape.iter().product::<usize>();
        if data.len() != expected {
            return Err(VolumeError::ElementCount {
                shape,
                expected,
                actual: data.len(),
            });
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(VolumeError::BadSpacing(spacing));
        }
        Ok(Volume {
            shape,
            spacing,
            data,
            modality: None,
        })
    }

    /// Unit-spacing convenience constructor for `f32` data.
    pub fn from_f32(shape: [usize; 3], values: Vec<f32>) -> Result<Self, VolumeError> {
        Volume::new(shape, [1.0; 3], VoxelData::F32(values))
    }

    pub fn from_u8(shape: [usize; 3], values: Vec<u8>) -> Result<Self, VolumeError> {
        Volume::new(shape, [1.0; 3], VoxelData::U8(values))
    }

    pub fn from_i16(shape: [usize; 3], values: Vec<i16>) -> Result<Self, VolumeError> {
        Volume::new(shape, [1.0; 3], VoxelData::I16(values))
    }

    pub fn with_modality(mut self, modality: Modality) -> Self {
        self.modality = Some(modality);
        self
    }

    pub fn with_spacing(mut self, spacing: [f32; 3]) -> Result<Self, VolumeError> {
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(VolumeError::BadSpacing(spacing));
        }
        self.spacing = spacing;
        Ok(self)
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn data(&self) -> &VoxelData {
        &self.data
    }

    pub fn into_data(self) -> VoxelData {
        self.data
    }

    pub fn kind(&self) -> ElementKind {
        self.data.kind()
    }

    pub fn modality(&self) -> Option<Modality> {
        self.modality
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Voxels in one axial (z) slice.
    pub fn slice_len(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.shape[0] * (y + self.shape[1] * z)
    }

    pub fn get_f64(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data.get_f64(self.index(x, y, z))
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            VoxelData::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.data {
            VoxelData::U8(v) => Some(v),
            _ => None,
        }
    }

    /// Copy of the data converted to `f32`, keeping shape, spacing and tag.
    pub fn to_f32(&self) -> Volume {
        Volume {
            shape: self.shape,
            spacing: self.spacing,
            data: VoxelData::F32(self.data.to_f32_vec()),
            modality: self.modality,
        }
    }

    /// Same geometry and tag, new data of matching length.
    pub(crate) fn with_data(&self, data: VoxelData) -> Volume {
        debug_assert_eq!(data.len(), self.len());
        Volume {
            shape: self.shape,
            spacing: self.spacing,
            data,
            modality: self.modality,
        }
    }

    /// Copies the sub-box `[x0, x0+w) × [y0, y0+h) × [z0, z1)`.
    pub(crate) fn extract_box(
        &self,
        x0: usize,
        w: usize,
        y0: usize,
        h: usize,
        z0: usize,
        z1: usize,
    ) -> Volume {
        let [nx, ny, _] = self.shape;
        let rows = (z0..z1).flat_map(move |z| {
            (y0..y0 + h).map(move |y| {
                let start = x0 + nx * (y + ny * z);
                start..start + w
            })
        });
        Volume {
            shape: [w, h, z1 - z0],
            spacing: self.spacing,
            data: self.data.gather(rows),
            modality: self.modality,
        }
    }
}
