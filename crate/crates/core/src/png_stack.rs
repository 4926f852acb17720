//! Volume export as a stack of 16-bit grayscale PNG slices.
//!
//! Each axial slice becomes `<stem>_z<index>.png` (index zero-padded to
//! three digits). Stored samples `q` map back to voxel values through the
//! affine `value = offset + scale * q` recorded in `<stem>.manifest.json`.
//! Integer-valued volumes spanning at most 65535 levels use `scale = 1` and
//! round-trip exactly; anything else is quantized over `[min, max]` with an
//! error of at most half a quantization step.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::volume::{Volume, VolumeError, VoxelData};

const LEVELS: f64 = 65535.0;

#[derive(Debug, thiserror::Error)]
pub enum PngStackError {
    #[error("volume contains non-finite values")]
    NonFiniteValues,
    #[error("{path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    BadSlice { path: PathBuf, message: String },
    #[error("manifest {path}: {message}")]
    BadManifest { path: PathBuf, message: String },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Sidecar describing how to rebuild the volume from its slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PngManifest {
    pub stem: String,
    pub shape: [usize; 3],
    pub spacing: [f32; 3],
    pub scale: f64,
    pub offset: f64,
    /// Source slice indices `[lo, hi)` the stack covers.
    pub slice_range: [usize; 2],
    pub files: Vec<String>,
}

impl PngManifest {
    pub fn file_name(stem: &str) -> String {
        format!("{stem}.manifest.json")
    }

    /// Largest absolute reconstruction error the quantization allows.
    pub fn max_error(&self) -> f64 {
        if self.is_exact() {
            0.0
        } else {
            self.scale / 2.0
        }
    }

    fn is_exact(&self) -> bool {
        self.scale == 1.0 && self.offset.fract() == 0.0
    }
}

pub fn slice_file_name(stem: &str, z: usize) -> String {
    format!("{stem}_z{z:03}.png")
}

/// Chooses `(scale, offset)` for a volume.
pub fn quantization(v: &Volume) -> Result<(f64, f64), PngStackError> {
    let d = v.data();
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut integral = true;
    for i in 0..v.len() {
        let x = d.get_f64(i);
        if !x.is_finite() {
            return Err(PngStackError::NonFiniteValues);
        }
        min = min.min(x);
        max = max.max(x);
        integral &= x.fract() == 0.0;
    }
    Ok(if integral && min >= 0.0 && max <= LEVELS {
        (1.0, 0.0)
    } else if integral && max - min <= LEVELS {
        (1.0, min)
    } else if max > min {
        ((max - min) / LEVELS, min)
    } else {
        (1.0, min)
    })
}

/// Writes one PNG per z-slice plus the manifest into `dir` (created if
/// needed). `slice_range` records where the slices came from in the source
/// volume; it defaults to `[0, nz)`.
pub fn export_png_stack(
    v: &Volume,
    dir: impl AsRef<Path>,
    stem: &str,
    slice_range: Option<[usize; 2]>,
) -> Result<PngManifest, PngStackError> {
    let dir = dir.as_ref();
    let (scale, offset) = quantization(v)?;
    fs::create_dir_all(dir).map_err(|source| io_failure(dir, source))?;
    let [nx, ny, nz] = v.shape();
    let d = v.data();
    let mut files = Vec::with_capacity(nz);
    let mut row = vec![0u8; 2 * nx * ny];
    for z in 0..nz {
        let base = nx * ny * z;
        for (j, px) in row.chunks_exact_mut(2).enumerate() {
            let q = ((d.get_f64(base + j) - offset) / scale)
                .round()
                .clamp(0.0, LEVELS) as u16;
            px.copy_from_slice(&q.to_be_bytes());
        }
        let name = slice_file_name(stem, z);
        let path = dir.join(&name);
        write_png16(&path, nx as u32, ny as u32, &row)?;
        files.push(name);
    }
    let manifest = PngManifest {
        stem: stem.to_string(),
        shape: v.shape(),
        spacing: v.spacing(),
        scale,
        offset,
        slice_range: slice_range.unwrap_or([0, nz]),
        files,
    };
    let path = dir.join(PngManifest::file_name(stem));
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|source| io_failure(&path, source))?;
    Ok(manifest)
}

/// Rebuilds an `F32` volume from a manifest written by [`export_png_stack`].
pub fn import_png_stack(manifest_path: impl AsRef<Path>) -> Result<Volume, PngStackError> {
    let manifest_path = manifest_path.as_ref();
    let text =
        fs::read_to_string(manifest_path).map_err(|source| io_failure(manifest_path, source))?;
    let manifest: PngManifest =
        serde_json::from_str(&text).map_err(|e| PngStackError::BadManifest {
            path: manifest_path.to_path_buf(),
            message: e.to_string(),
        })?;
    let [nx, ny, nz] = manifest.shape;
    if manifest.files.len() != nz {
        return Err(PngStackError::BadManifest {
            path: manifest_path.to_path_buf(),
            message: format!("{} files listed for depth {nz}", manifest.files.len()),
        });
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut values = Vec::with_capacity(nx * ny * nz);
    for name in &manifest.files {
        let path = dir.join(name);
        let samples = read_png16(&path, nx, ny)?;
        values.extend(
            samples
                .into_iter()
                .map(|q| (manifest.offset + manifest.scale * f64::from(q)) as f32),
        );
    }
    Ok(Volume::new(
        manifest.shape,
        manifest.spacing,
        VoxelData::F32(values),
    )?)
}

fn write_png16(
    path: &Path,
    width: u32,
    height: u32,
    big_endian_samples: &[u8],
) -> Result<(), PngStackError> {
    let file = File::create(path).map_err(|source| io_failure(path, source))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width, height);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Sixteen);
    let encode_err = |e: png::EncodingError| PngStackError::IoFailure {
        path: path.to_path_buf(),
        source: io::Error::other(e),
    };
    let mut writer = encoder.write_header().map_err(encode_err)?;
    writer
        .write_image_data(big_endian_samples)
        .map_err(encode_err)?;
    writer.finish().map_err(encode_err)
}

fn read_png16(path: &Path, nx: usize, ny: usize) -> Result<Vec<u16>, PngStackError> {
    let bad = |message: String| PngStackError::BadSlice {
        path: path.to_path_buf(),
        message,
    };
    let file = File::open(path).map_err(|source| io_failure(path, source))?;
    let mut reader = png::Decoder::new(BufReader::new(file))
        .read_info()
        .map_err(|e| bad(e.to_string()))?;
    let mut buf = vec![
        0u8;
        reader
            .output_buffer_size()
            .ok_or_else(|| bad("image too large".into()))?
    ];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| bad(e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(bad(format!(
            "expected 16-bit grayscale, got {:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    if (info.width as usize, info.height as usize) != (nx, ny) {
        return Err(bad(format!(
            "slice is {}x{}, manifest says {nx}x{ny}",
            info.width, info.height
        )));
    }
    Ok(buf[..info.buffer_size()]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect())
}

fn io_failure(path: &Path, source: io::Error) -> PngStackError {
    PngStackError::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}
