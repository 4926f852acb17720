//! NIfTI-1 reading and writing, raw or gzip-compressed.
//!
//! Every field of the 348-byte header is kept, together with any extension
//! bytes between the header and `vox_offset`, so that parsing and writing are
//! exact inverses on uncompressed streams. Only `uint8`, `int16` and
//! `float32` voxel data are supported.

use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder as _, LittleEndian};
use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::volume::{ElementKind, Volume, VolumeError, VoxelData};

pub const HEADER_SIZE: usize = 348;
/// Magic code for single-file NIfTI-1 (`.nii[.gz]`).
pub const MAGIC_SINGLE: [u8; 4] = *b"n+1\0";
/// Magic code for header/image pairs (`.hdr` + `.img`).
pub const MAGIC_PAIR: [u8; 4] = *b"ni1\0";

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

pub const DT_UINT8: i16 = 2;
pub const DT_INT16: i16 = 4;
pub const DT_FLOAT32: i16 = 16;

#[derive(Debug, thiserror::Error)]
pub enum NiftiError {
    #[error("not a NIfTI-1 stream: bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("sizeof_hdr is {little} (little-endian) / {big} (big-endian), expected 348")]
    BadHeaderSize { little: i32, big: i32 },
    #[error("truncated data: need {expected} bytes, have {actual}")]
    TruncatedData { expected: usize, actual: usize },
    #[error("unsupported datatype code {0} (supported: uint8=2, int16=4, float32=16)")]
    UnsupportedDatatype(i16),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("header shape {header:?} does not match volume shape {volume:?}")]
    ShapeMismatch {
        header: [usize; 3],
        volume: [usize; 3],
    },
    #[error("header datatype {header} does not match volume element kind {volume}")]
    KindMismatch { header: i16, volume: ElementKind },
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("gzip stream: {0}")]
    Gzip(#[source] io::Error),
}

pub type Result<T> = std::result::Result<T, NiftiError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteOrder {
    Little,
    Big,
}

impl fmt::Display for ByteOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ByteOrder::Little => "little-endian",
            ByteOrder::Big => "big-endian",
        })
    }
}

/// qform/sform orientation fields. Preserved for round-trip but never used
/// to resample; inputs are assumed co-registered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orientation {
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow_x: [f32; 4],
    pub srow_y: [f32; 4],
    pub srow_z: [f32; 4],
}

/// A complete NIfTI-1 header.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub sizeof_hdr: i32,
    pub data_type: [u8; 10],
    pub db_name: [u8; 18],
    pub extents: i32,
    pub session_error: i16,
    pub regular: u8,
    pub dim_info: u8,
    pub dim: [i16; 8],
    pub intent_p: [f32; 3],
    pub intent_code: i16,
    pub datatype_code: i16,
    pub bitpix: i16,
    pub slice_start: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub slice_end: i16,
    pub slice_code: u8,
    pub xyzt_units: u8,
    pub cal_max: f32,
    pub cal_min: f32,
    pub slice_duration: f32,
    pub toffset: f32,
    pub glmax: i32,
    pub glmin: i32,
    pub descrip: [u8; 80],
    pub aux_file: [u8; 24],
    pub orientation: Orientation,
    pub intent_name: [u8; 16],
    pub magic: [u8; 4],
    pub byte_order: ByteOrder,
    /// Bytes between the header and `vox_offset` (extender flag plus any
    /// extensions) in single-file streams.
    pub extension: Vec<u8>,
}

impl NiftiHeader {
    /// A fresh little-endian single-file header describing `volume`.
    pub fn for_volume(volume: &Volume) -> NiftiHeader {
        let [nx, ny, nz] = volume.shape();
        let [sx, sy, sz] = volume.spacing();
        let kind = volume.kind();
        let mut dim = [1i16; 8];
        dim[0] = 3;
        dim[1] = nx as i16;
        dim[2] = ny as i16;
        dim[3] = nz as i16;
        let mut pixdim = [1.0f32; 8];
        pixdim[1] = sx;
        pixdim[2] = sy;
        pixdim[3] = sz;
        NiftiHeader {
            sizeof_hdr: HEADER_SIZE as i32,
            data_type: [0; 10],
            db_name: [0; 18],
            extents: 0,
            session_error: 0,
            regular: b'r',
            dim_info: 0,
            dim,
            intent_p: [0.0; 3],
            intent_code: 0,
            datatype_code: datatype_for(kind),
            bitpix: kind.bits() as i16,
            slice_start: 0,
            pixdim,
            vox_offset: 352.0,
            scl_slope: 1.0,
            scl_inter: 0.0,
            slice_end: 0,
            slice_code: 0,
            // mm + seconds
            xyzt_units: 2 | 8,
            cal_max: 0.0,
            cal_min: 0.0,
            slice_duration: 0.0,
            toffset: 0.0,
            glmax: 0,
            glmin: 0,
            descrip: [0; 80],
            aux_file: [0; 24],
            orientation: Orientation {
                qform_code: 0,
                sform_code: 1,
                quatern: [0.0; 3],
                qoffset: [0.0; 3],
                srow_x: [sx, 0.0, 0.0, 0.0],
                srow_y: [0.0, sy, 0.0, 0.0],
                srow_z: [0.0, 0.0, sz, 0.0],
            },
            intent_name: [0; 16],
            magic: MAGIC_SINGLE,
            byte_order: ByteOrder::Little,
            extension: vec![0; 4],
        }
    }

    /// Same header, re-targeted at a volume of a different shape or kind.
    pub fn retarget(&self, volume: &Volume) -> NiftiHeader {
        let mut h = self.clone();
        let kind = volume.kind();
        let [nx, ny, nz] = volume.shape();
        h.dim = [3, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1];
        h.datatype_code = datatype_for(kind);
        h.bitpix = kind.bits() as i16;
        let [sx, sy, sz] = volume.spacing();
        h.pixdim[1] = sx;
        h.pixdim[2] = sy;
        h.pixdim[3] = sz;
        h.scl_slope = 1.0;
        h.scl_inter = 0.0;
        h
    }

    pub fn with_description(mut self, text: &str) -> NiftiHeader {
        self.descrip = [0; 80];
        let n = text.len().min(79);
        self.descrip[..n].copy_from_slice(&text.as_bytes()[..n]);
        self
    }

    pub fn element_kind(&self) -> Result<ElementKind> {
        kind_for(self.datatype_code)
    }

    /// Spatial extents `(nx, ny, nz)`, padding missing axes with 1.
    pub fn shape(&self) -> [usize; 3] {
        let rank = self.dim[0].clamp(0, 7) as usize;
        let mut shape = [1usize; 3];
        for (axis, n) in shape.iter_mut().enumerate() {
            if axis < rank {
                *n = self.dim[axis + 1].max(1) as usize;
            }
        }
        shape
    }

    /// Voxel spacing from `pixdim[1..=3]`; unusable entries fall back to 1 mm.
    pub fn spacing(&self) -> [f32; 3] {
        let rank = self.dim[0].clamp(0, 7) as usize;
        let mut spacing = [1.0f32; 3];
        for (axis, s) in spacing.iter_mut().enumerate() {
            let p = self.pixdim[axis + 1].abs();
            if axis < rank && p.is_finite() && p > 0.0 {
                *s = p;
            }
        }
        spacing
    }

    /// True when `scl_slope`/`scl_inter` change the stored values.
    pub fn has_scaling(&self) -> bool {
        self.scl_slope != 0.0
            && self.scl_slope.is_finite()
            && !(self.scl_slope == 1.0 && self.scl_inter == 0.0)
    }

    pub fn is_single_file(&self) -> bool {
        self.magic == MAGIC_SINGLE
    }

    pub fn voxel_count(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn description(&self) -> String {
        c_string(&self.descrip)
    }

    fn validate(&self) -> Result<()> {
        if self.magic != MAGIC_SINGLE && self.magic != MAGIC_PAIR {
            return Err(NiftiError::BadMagic(self.magic));
        }
        let rank = self.dim[0];
        if !(1..=7).contains(&rank) {
            return Err(NiftiError::InvalidHeader(format!(
                "dim[0] = {rank}, expected 1..=7"
            )));
        }
        for i in 1..=rank as usize {
            if self.dim[i] < 1 {
                return Err(NiftiError::InvalidHeader(format!(
                    "dim[{i}] = {}",
                    self.dim[i]
                )));
            }
        }
        if (4..=rank as usize).any(|i| self.dim[i] != 1) {
            return Err(NiftiError::InvalidHeader(format!(
                "only 3D volumes are supported, dim = {:?}",
                self.dim
            )));
        }
        let kind = self.element_kind()?;
        if self.bitpix != kind.bits() as i16 {
            return Err(NiftiError::InvalidHeader(format!(
                "bitpix {} inconsistent with datatype {}",
                self.bitpix, self.datatype_code
            )));
        }
        if !(self.vox_offset.is_finite()
            && self.vox_offset >= 0.0
            && self.vox_offset.fract() == 0.0)
        {
            return Err(NiftiError::InvalidHeader(format!(
                "vox_offset = {}",
                self.vox_offset
            )));
        }
        if self.is_single_file() && (self.vox_offset as usize) < HEADER_SIZE {
            return Err(NiftiError::InvalidHeader(format!(
                "vox_offset {} lies inside the header",
                self.vox_offset
            )));
        }
        Ok(())
    }

    fn decode<E: byteorder::ByteOrder>(b: &[u8], byte_order: ByteOrder) -> NiftiHeader {
        let f32s =
            |off: usize, out: &mut [f32]| E::read_f32_into(&b[off..off + 4 * out.len()], out);
        let mut dim = [0i16; 8];
        E::read_i16_into(&b[40..56], &mut dim);
        let mut intent_p = [0f32; 3];
        f32s(56, &mut intent_p);
        let mut pixdim = [0f32; 8];
        f32s(76, &mut pixdim);
        let mut quatern = [0f32; 3];
        f32s(256, &mut quatern);
        let mut qoffset = [0f32; 3];
        f32s(268, &mut qoffset);
        let mut srow_x = [0f32; 4];
        f32s(280, &mut srow_x);
        let mut srow_y = [0f32; 4];
        f32s(296, &mut srow_y);
        let mut srow_z = [0f32; 4];
        f32s(312, &mut srow_z);
        NiftiHeader {
            sizeof_hdr: E::read_i32(&b[0..]),
            data_type: b[4..14].try_into().unwrap(),
            db_name: b[14..32].try_into().unwrap(),
            extents: E::read_i32(&b[32..]),
            session_error: E::read_i16(&b[36..]),
            regular: b[38],
            dim_info: b[39],
            dim,
            intent_p,
            intent_code: E::read_i16(&b[68..]),
            datatype_code: E::read_i16(&b[70..]),
            bitpix: E::read_i16(&b[72..]),
            slice_start: E::read_i16(&b[74..]),
            pixdim,
            vox_offset: E::read_f32(&b[108..]),
            scl_slope: E::read_f32(&b[112..]),
            scl_inter: E::read_f32(&b[116..]),
            slice_end: E::read_i16(&b[120..]),
            slice_code: b[122],
            xyzt_units: b[123],
            cal_max: E::read_f32(&b[124..]),
            cal_min: E::read_f32(&b[128..]),
            slice_duration: E::read_f32(&b[132..]),
            toffset: E::read_f32(&b[136..]),
            glmax: E::read_i32(&b[140..]),
            glmin: E::read_i32(&b[144..]),
            descrip: b[148..228].try_into().unwrap(),
            aux_file: b[228..252].try_into().unwrap(),
            orientation: Orientation {
                qform_code: E::read_i16(&b[252..]),
                sform_code: E::read_i16(&b[254..]),
                quatern,
                qoffset,
                srow_x,
                srow_y,
                srow_z,
            },
            intent_name: b[328..344].try_into().unwrap(),
            magic: b[344..348].try_into().unwrap(),
            byte_order,
            extension: Vec::new(),
        }
    }

    fn encode<E: byteorder::ByteOrder>(&self) -> [u8; HEADER_SIZE] {
        let mut b = [0u8; HEADER_SIZE];
        E::write_i32(&mut b[0..], self.sizeof_hdr);
        b[4..14].copy_from_slice(&self.data_type);
        b[14..32].copy_from_slice(&self.db_name);
        E::write_i32(&mut b[32..], self.extents);
        E::write_i16(&mut b[36..], self.session_error);
        b[38] = self.regular;
        b[39] = self.dim_info;
        E::write_i16_into(&self.dim, &mut b[40..56]);
        E::write_f32_into(&self.intent_p, &mut b[56..68]);
        E::write_i16(&mut b[68..], self.intent_code);
        E::write_i16(&mut b[70..], self.datatype_code);
        E::write_i16(&mut b[72..], self.bitpix);
        E::write_i16(&mut b[74..], self.slice_start);
        E::write_f32_into(&self.pixdim, &mut b[76..108]);
        E::write_f32(&mut b[108..], self.vox_offset);
        E::write_f32(&mut b[112..], self.scl_slope);
        E::write_f32(&mut b[116..], self.scl_inter);
        E::write_i16(&mut b[120..], self.slice_end);
        b[122] = self.slice_code;
        b[123] = self.xyzt_units;
        E::write_f32(&mut b[124..], self.cal_max);
        E::write_f32(&mut b[128..], self.cal_min);
        E::write_f32(&mut b[132..], self.slice_duration);
        E::write_f32(&mut b[136..], self.toffset);
        E::write_i32(&mut b[140..], self.glmax);
        E::write_i32(&mut b[144..], self.glmin);
        b[148..228].copy_from_slice(&self.descrip);
        b[228..252].copy_from_slice(&self.aux_file);
        let o = &self.orientation;
        E::write_i16(&mut b[252..], o.qform_code);
        E::write_i16(&mut b[254..], o.sform_code);
        E::write_f32_into(&o.quatern, &mut b[256..268]);
        E::write_f32_into(&o.qoffset, &mut b[268..280]);
        E::write_f32_into(&o.srow_x, &mut b[280..296]);
        E::write_f32_into(&o.srow_y, &mut b[296..312]);
        E::write_f32_into(&o.srow_z, &mut b[312..328]);
        b[328..344].copy_from_slice(&self.intent_name);
        b[344..348].copy_from_slice(&self.magic);
        b
    }

    /// The 348 header bytes in this header's byte order.
    pub fn to_bytes(&self) -> [u8; HEADER_SIZE] {
        match self.byte_order {
            ByteOrder::Little => self.encode::<LittleEndian>(),
            ByteOrder::Big => self.encode::<BigEndian>(),
        }
    }
}

impl fmt::Display for NiftiHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [nx, ny, nz] = self.shape();
        let [sx, sy, sz] = self.spacing();
        let kind = self
            .element_kind()
            .map(|k| k.to_string())
            .unwrap_or_else(|_| format!("code {}", self.datatype_code));
        writeln!(f, "shape:      {nx}x{ny}x{nz}")?;
        writeln!(
            f,
            "datatype:   {kind} (code {}, bitpix {})",
            self.datatype_code, self.bitpix
        )?;
        writeln!(f, "spacing:    {sx} x {sy} x {sz} mm")?;
        if self.has_scaling() {
            writeln!(
                f,
                "scaling:    value * {} + {}",
                self.scl_slope, self.scl_inter
            )?;
        } else {
            writeln!(
                f,
                "scaling:    none (slope {}, inter {})",
                self.scl_slope, self.scl_inter
            )?;
        }
        writeln!(f, "magic:      {}", c_string(&self.magic))?;
        writeln!(f, "byte order: {}", self.byte_order)?;
        write!(f, "vox_offset: {}", self.vox_offset)
    }
}

/// A parsed file: header, the volume as exposed to callers and, when
/// scaling applies, the stored values that produced it.
#[derive(Debug, Clone)]
pub struct NiftiImage {
    header: NiftiHeader,
    volume: Volume,
    raw: Option<Volume>,
}

impl NiftiImage {
    pub fn header(&self) -> &NiftiHeader {
        &self.header
    }

    /// Voxel values after `scl_slope`/`scl_inter` scaling (`F32` when scaled).
    pub fn volume(&self) -> &Volume {
        &self.volume
    }

    /// Values exactly as stored on disk.
    pub fn stored(&self) -> &Volume {
        self.raw.as_ref().unwrap_or(&self.volume)
    }

    pub fn is_scaled(&self) -> bool {
        self.raw.is_some()
    }

    pub fn into_parts(self) -> (NiftiHeader, Volume) {
        (self.header, self.volume)
    }

    /// Re-encodes the file from the stored values.
    pub fn to_bytes(&self, compress: bool) -> Result<Vec<u8>> {
        write_nifti(&self.header, self.stored(), compress)
    }
}

/// Parses a single-file NIfTI-1 stream, gzip-compressed or not.
pub fn parse_nifti(bytes: &[u8]) -> Result<NiftiImage> {
    let plain = maybe_gunzip(bytes)?;
    let header = parse_header(&plain)?;
    if !header.is_single_file() {
        return Err(NiftiError::InvalidHeader(
            "header/image pair magic `ni1`; read it with parse_nifti_pair".into(),
        ));
    }
    let offset = header.vox_offset as usize;
    let mut header = header;
    header.extension = plain[HEADER_SIZE..offset.min(plain.len())].to_vec();
    if plain.len() < offset {
        return Err(NiftiError::TruncatedData {
            expected: offset + header.voxel_count() * header.element_kind()?.bytes(),
            actual: plain.len(),
        });
    }
    build_image(header, &plain[offset..])
}

/// Parses a `.hdr`/`.img` pair. Either stream may be gzip-compressed.
pub fn parse_nifti_pair(header_bytes: &[u8], image_bytes: &[u8]) -> Result<NiftiImage> {
    let plain_header = maybe_gunzip(header_bytes)?;
    let header = parse_header(&plain_header)?;
    if header.magic != MAGIC_PAIR {
        return Err(NiftiError::InvalidHeader(
            "expected pair magic `ni1`".into(),
        ));
    }
    let plain_image = maybe_gunzip(image_bytes)?;
    let offset = header.vox_offset as usize;
    if plain_image.len() < offset {
        return Err(NiftiError::TruncatedData {
            expected: offset + header.voxel_count() * header.element_kind()?.bytes(),
            actual: plain_image.len(),
        });
    }
    build_image(header, &plain_image[offset..])
}

/// Reads a NIfTI-1 file from disk. `.hdr` files are paired with the sibling
/// `.img` (or `.img.gz`).
pub fn read_nifti(path: impl AsRef<Path>) -> Result<NiftiImage> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let plain = maybe_gunzip(&bytes)?;
    if plain.len() >= HEADER_SIZE && plain[344..348] == MAGIC_PAIR {
        let image_path = pair_image_path(path)?;
        let image = read_file(&image_path)?;
        return parse_nifti_pair(&plain, &image);
    }
    parse_nifti(&plain)
}

/// Reads only the header of a file.
pub fn read_header(path: impl AsRef<Path>) -> Result<NiftiHeader> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    parse_header(&maybe_gunzip(&bytes)?)
}

/// Encodes `volume` under `header` as a single-file stream.
///
/// The header must describe the volume's shape and element kind. Without
/// compression, `parse_nifti` of the output reproduces both exactly.
pub fn write_nifti(header: &NiftiHeader, volume: &Volume, compress: bool) -> Result<Vec<u8>> {
    check_consistent(header, volume)?;
    if !header.is_single_file() {
        return Err(NiftiError::InvalidHeader(
            "pair magic `ni1` cannot be written as a single stream; use write_nifti_pair".into(),
        ));
    }
    let offset = header.vox_offset as usize;
    if HEADER_SIZE + header.extension.len() > offset {
        return Err(NiftiError::InvalidHeader(format!(
            "{} extension bytes do not fit before vox_offset {offset}",
            header.extension.len()
        )));
    }
    let mut out = Vec::with_capacity(offset + volume.len() * volume.kind().bytes());
    out.extend_from_slice(&header.to_bytes());
    out.extend_from_slice(&header.extension);
    out.resize(offset, 0);
    encode_data(volume.data(), header.byte_order, &mut out);
    if compress {
        gzip(&out)
    } else {
        Ok(out)
    }
}

/// Encodes a `.hdr`/`.img` pair, uncompressed.
pub fn write_nifti_pair(header: &NiftiHeader, volume: &Volume) -> Result<(Vec<u8>, Vec<u8>)> {
    check_consistent(header, volume)?;
    if header.magic != MAGIC_PAIR {
        return Err(NiftiError::InvalidHeader(
            "expected pair magic `ni1`".into(),
        ));
    }
    let mut image = vec![0u8; header.vox_offset as usize];
    encode_data(volume.data(), header.byte_order, &mut image);
    Ok((header.to_bytes().to_vec(), image))
}

/// Writes a single-file NIfTI; gzip-compressed when `compress` is set.
pub fn write_nifti_file(
    path: impl AsRef<Path>,
    header: &NiftiHeader,
    volume: &Volume,
    compress: bool,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_nifti(header, volume, compress)?;
    fs::write(path, bytes).map_err(|source| NiftiError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Convenience: writes `volume` with a fresh header; gzip when the path ends
/// in `.gz`.
pub fn save_volume(path: impl AsRef<Path>, volume: &Volume) -> Result<()> {
    let path = path.as_ref();
    let compress = path.extension().is_some_and(|e| e == "gz");
    write_nifti_file(path, &NiftiHeader::for_volume(volume), volume, compress)
}

pub fn is_gzip(bytes: &[u8]) -> bool {
    bytes.starts_with(&GZIP_MAGIC)
}

fn maybe_gunzip(bytes: &[u8]) -> Result<std::borrow::Cow<'_, [u8]>> {
    if !is_gzip(bytes) {
        return Ok(std::borrow::Cow::Borrowed(bytes));
    }
    let mut out = Vec::new();
    MultiGzDecoder::new(bytes)
        .read_to_end(&mut out)
        .map_err(NiftiError::Gzip)?;
    Ok(std::borrow::Cow::Owned(out))
}

fn gzip(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut enc = GzEncoder::new(Vec::with_capacity(bytes.len() / 2), Compression::default());
    enc.write_all(bytes).map_err(NiftiError::Gzip)?;
    enc.finish().map_err(NiftiError::Gzip)
}

/// Decodes and validates the 348-byte header at the start of `plain`.
fn parse_header(plain: &[u8]) -> Result<NiftiHeader> {
    if plain.len() < HEADER_SIZE {
        // A short prefix that still announces a NIfTI header is a truncated
        // file; anything else is simply not NIfTI.
        if plain.len() >= 4
            && (LittleEndian::read_i32(plain) == HEADER_SIZE as i32
                || BigEndian::read_i32(plain) == HEADER_SIZE as i32)
        {
            return Err(NiftiError::TruncatedData {
                expected: HEADER_SIZE,
                actual: plain.len(),
            });
        }
        let mut magic = [0u8; 4];
        let n = plain.len().min(4);
        magic[..n].copy_from_slice(&plain[..n]);
        return Err(NiftiError::BadMagic(magic));
    }
    let magic: [u8; 4] = plain[344..348].try_into().unwrap();
    if magic != MAGIC_SINGLE && magic != MAGIC_PAIR {
        return Err(NiftiError::BadMagic(magic));
    }
    let little = LittleEndian::read_i32(plain);
    let big = BigEndian::read_i32(plain);
    let header = if little == HEADER_SIZE as i32 {
        NiftiHeader::decode::<LittleEndian>(plain, ByteOrder::Little)
    } else if big == HEADER_SIZE as i32 {
        NiftiHeader::decode::<BigEndian>(plain, ByteOrder::Big)
    } else {
        return Err(NiftiError::BadHeaderSize { little, big });
    };
    header.validate()?;
    Ok(header)
}

fn build_image(header: NiftiHeader, data: &[u8]) -> Result<NiftiImage> {
    let kind = header.element_kind()?;
    let count = header.voxel_count();
    let need = count * kind.bytes();
    if data.len() < need {
        return Err(NiftiError::TruncatedData {
            expected: header.vox_offset as usize + need,
            actual: header.vox_offset as usize + data.len(),
        });
    }
    let data = &data[..need];
    let voxels = match (kind, header.byte_order) {
        (ElementKind::U8, _) => VoxelData::U8(data.to_vec()),
        (ElementKind::I16, order) => {
            let mut v = vec![0i16; count];
            match order {
                ByteOrder::Little => LittleEndian::read_i16_into(data, &mut v),
                ByteOrder::Big => BigEndian::read_i16_into(data, &mut v),
            }
            VoxelData::I16(v)
        }
        (ElementKind::F32, order) => {
            let mut v = vec![0f32; count];
            match order {
                ByteOrder::Little => LittleEndian::read_f32_into(data, &mut v),
                ByteOrder::Big => BigEndian::read_f32_into(data, &mut v),
            }
            VoxelData::F32(v)
        }
    };
    let stored = Volume::new(header.shape(), header.spacing(), voxels)?;
    if header.has_scaling() {
        let slope = f64::from(header.scl_slope);
        let inter = f64::from(header.scl_inter);
        let scaled = (0..stored.len())
            .map(|i| (stored.data().get_f64(i) * slope + inter) as f32)
            .collect();
        let volume = Volume::new(header.shape(), header.spacing(), VoxelData::F32(scaled))?;
        Ok(NiftiImage {
            header,
            volume,
            raw: Some(stored),
        })
    } else {
        Ok(NiftiImage {
            header,
            volume: stored,
            raw: None,
        })
    }
}

fn encode_data(data: &VoxelData, order: ByteOrder, out: &mut Vec<u8>) {
    let start = out.len();
    match data {
        VoxelData::U8(v) => out.extend_from_slice(v),
        VoxelData::I16(v) => {
            out.resize(start + 2 * v.len(), 0);
            match order {
                ByteOrder::Little => LittleEndian::write_i16_into(v, &mut out[start..]),
                ByteOrder::Big => BigEndian::write_i16_into(v, &mut out[start..]),
            }
        }
        VoxelData::F32(v) => {
            out.resize(start + 4 * v.len(), 0);
            match order {
                ByteOrder::Little => LittleEndian::write_f32_into(v, &mut out[start..]),
                ByteOrder::Big => BigEndian::write_f32_into(v, &mut out[start..]),
            }
        }
    }
}

fn check_consistent(header: &NiftiHeader, volume: &Volume) -> Result<()> {
    header.validate()?;
    if header.shape() != volume.shape() {
        return Err(NiftiError::ShapeMismatch {
            header: header.shape(),
            volume: volume.shape(),
        });
    }
    if header.element_kind()? != volume.kind() {
        return Err(NiftiError::KindMismatch {
            header: header.datatype_code,
            volume: volume.kind(),
        });
    }
    Ok(())
}

fn datatype_for(kind: ElementKind) -> i16 {
    match kind {
        ElementKind::U8 => DT_UINT8,
        ElementKind::I16 => DT_INT16,
        ElementKind::F32 => DT_FLOAT32,
    }
}

fn kind_for(code: i16) -> Result<ElementKind> {
    match code {
        DT_UINT8 => Ok(ElementKind::U8),
        DT_INT16 => Ok(ElementKind::I16),
        DT_FLOAT32 => Ok(ElementKind::F32),
        other => Err(NiftiError::UnsupportedDatatype(other)),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| NiftiError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn pair_image_path(header_path: &Path) -> Result<PathBuf> {
    let name = header_path.to_string_lossy();
    let stem = name
        .strip_suffix(".hdr.gz")
        .or_else(|| name.strip_suffix(".hdr"))
        .unwrap_or(&name);
    [format!("{stem}.img"), format!("{stem}.img.gz")]
        .into_iter()
        .map(PathBuf::from)
        .find(|p| p.exists())
        .ok_or_else(|| NiftiError::Io {
            path: PathBuf::from(format!("{stem}.img")),
            source: io::Error::new(
                io::ErrorKind::NotFound,
                "image file of header/image pair not found",
            ),
        })
}

fn c_string(bytes: &[u8]) -> String {
    let end = bytes.iter().position(|&b| b == 0).unwrap_or(bytes.len());
    String::from_utf8_lossy(&bytes[..end]).into_owned()
}
