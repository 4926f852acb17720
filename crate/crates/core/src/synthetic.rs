//! Seeded BraTS-shaped test data.
//!
//! A synthetic patient is an ellipsoidal "brain" of noisy tissue on a zero
//! background, with a nested tumor labelled like BraTS ground truth
//! (2 = edema, 1 = necrotic core, 4 = enhancing). Every channel draws from its
//! own seeded stream, so a channel's contents do not depend on which other
//! channels are generated.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{DatasetLayout, Grade};
use crate::nifti::{save_volume, NiftiError};
use crate::volume::{ElementKind, Modality, Volume, VoxelData};

pub const BRATS_SHAPE: [usize; 3] = [240, 240, 155];
pub const BRATS_LABELS: [u8; 4] = [0, 1, 2, 4];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub shape: [usize; 3],
    pub kind: ElementKind,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            shape: BRATS_SHAPE,
            kind: ElementKind::I16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPatient {
    pub channels: Vec<(Modality, Volume)>,
    pub ground_truth: Volume,
}

impl SyntheticPatient {
    pub fn channel(&self, m: Modality) -> Option<&Volume> {
        self.channels.iter().find(|(c, _)| *c == m).map(|(_, v)| v)
    }
}

// Mean tissue intensity and per-label tumor contrast for each channel.
fn channel_profile(m: Modality) -> (f64, [f64; 3]) {
    match m {
        Modality::Flair => (420.0, [1.9, 1.2, 1.5]),
        Modality::T1 => (560.0, [0.7, 0.8, 0.9]),
        Modality::T2 => (480.0, [1.8, 1.5, 1.3]),
        Modality::T1ce => (500.0, [0.9, 0.6, 2.2]),
        _ => (0.0, [1.0; 3]),
    }
}

fn mix(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Anatomy {
    shape: [usize; 3],
    center: [f64; 3],
    radii: [f64; 3],
    tumor_center: [f64; 3],
    tumor_radius: f64,
}

impl Anatomy {
    fn new(shape: [usize; 3], seed: u64) -> Anatomy {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0xA5));
        let dims = shape.map(|n| n as f64);
        let center = dims.map(|n| (n - 1.0) / 2.0);
        let radii = [0.38 * dims[0], 0.44 * dims[1], 0.36 * dims[2]];
        let tumor_center = [
            center[0] + rng.random_range(-0.35..0.35) * radii[0],
            center[1] + rng.random_range(-0.35..0.35) * radii[1],
            center[2] + rng.random_range(-0.3..0.3) * radii[2],
        ];
        let tumor_radius = rng.random_range(0.18..0.3) * radii[0].min(radii[1]).min(radii[2] * 2.0);
        Anatomy {
            shape,
            center,
            radii,
            tumor_center,
            tumor_radius,
        }
    }

    fn in_brain(&self, x: usize, y: usize, z: usize) -> bool {
        let p = [x as f64, y as f64, z as f64];
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }

    /// BraTS label at a voxel.
    fn label(&self, x: usize, y: usize, z: usize) -> u8 {
        if !self.in_brain(x, y, z) {
            return 0;
        }
        let p = [x as f64, y as f64, z as f64];
        let d = (0..3)
            .map(|a| (p[a] - self.tumor_center[a]).powi(2))
            .sum::<f64>()
            .sqrt()
            / self.tumor_radius.max(1e-9);
        match d {
            d if d <= 0.35 => 1,
            d if d <= 0.6 => 4,
            d if d <= 1.0 => 2,
            _ => 0,
        }
    }

    fn labels(&self) -> Vec<u8> {
        let [nx, ny, nz] = self.shape;
        let mut out = Vec::with_capacity(nx * ny * nz);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    out.push(self.label(x, y, z));
                }
            }
        }
        out
    }
}

/// Generates one channel. `labels` and `brain` must come from the same anatomy.
fn channel(spec: &SyntheticSpec, labels: &[u8], brain: &[bool], m: Modality) -> Volume {
    let (base, contrast) = channel_profile(m);
    let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, 1 + m as u64));
    let values: Vec<f64> = labels
        .iter()
        .zip(brain)
        .map(|(&label, &inside)| {
            if !inside {
                return 0.0;
            }
            let gain = match label {
                1 => contrast[1],
                4 => contrast[2],
                2 => contrast[0],
                _ => 1.0,
            };
            // Strictly positive inside the brain.
            (base * gain * (1.0 + 0.15 * (rng.random::<f64>() - 0.5) * 2.0)).max(1.0)
        })
        .collect();
    let data = match spec.kind {
        ElementKind::U8 => {
            let peak = values.iter().copied().fold(1.0, f64::max);
            VoxelData::U8(
                values
                    .iter()
                    .map(|&v| (v / peak * 255.0).round() as u8)
                    .collect(),
            )
        }
        ElementKind::I16 => VoxelData::I16(values.iter().map(|&v| v.round() as i16).collect()),
        ElementKind::F32 => VoxelData::F32(values.iter().map(|&v| v as f32).collect()),
    };
    Volume::new(spec.shape, [1.0; 3], data)
        .expect("shape matches")
        .with_modality(m)
}

fn brain_mask(anatomy: &Anatomy) -> Vec<bool> {
    let [nx, ny, nz] = anatomy.shape;
    let mut out = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                out.push(anatomy.in_brain(x, y, z));
            }
        }
    }
    out
}

/// A patient with the requested channels, in the order given.
pub fn synthetic_channels(spec: &SyntheticSpec, modalities: &[Modality]) -> SyntheticPatient {
    let anatomy = Anatomy::new(spec.shape, spec.seed);
    let labels = anatomy.labels();
    let brain = brain_mask(&anatomy);
    let channels = modalities
        .iter()
        .map(|&m| (m, channel(spec, &labels, &brain, m)))
        .collect();
    let ground_truth = Volume::new(spec.shape, [1.0; 3], VoxelData::U8(labels))
        .expect("shape matches")
        .with_modality(Modality::Mask);
    SyntheticPatient {
        channels,
        ground_truth,
    }
}

/// A patient with all four channels.
pub fn synthetic_patient(spec: &SyntheticSpec) -> SyntheticPatient {
    synthetic_channels(spec, &Modality::CHANNELS)
}

/// Seed of the `index`-th patient of a synthetic cohort.
pub fn patient_seed(seed: u64, index: usize) -> u64 {
    mix(seed, 0x1000 + index as u64)
}

/// Writes a BraTS-layout tree with `hgg` + `lgg` patients named
/// `Synth_<grade>_<nnn>`, each with four channels and a `seg` mask.
pub fn write_synthetic_dataset(
    root: impl AsRef<Path>,
    hgg: usize,
    lgg: usize,
    spec: &SyntheticSpec,
) -> Result<Vec<String>, NiftiError> {
    let root = root.as_ref();
    let layout = DatasetLayout::default();
    let mut ids = Vec::new();
    let cohort = (0..hgg)
        .map(|i| (Grade::Hgg, i))
        .chain((0..lgg).map(|i| (Grade::Lgg, i)));
    for (n, (grade, i)) in cohort.enumerate() {
        let id = format!("Synth_{grade}_{i:03}");
        let dir = DatasetLayout::patient_dir(root, grade, &id);
        fs::create_dir_all(&dir).map_err(|source| NiftiError::Io {
            path: dir.clone(),
            source,
        })?;
        let patient = synthetic_patient(&SyntheticSpec {
            seed: patient_seed(spec.seed, n),
            ..*spec
        });
        for (m, v) in &patient.channels {
            save_volume(layout.path(root, grade, &id, *m), v)?;
        }
        save_volume(
            layout.path(root, grade, &id, Modality::Mask),
            &patient.ground_truth,
        )?;
        ids.push(id);
    }
    Ok(ids)
}
