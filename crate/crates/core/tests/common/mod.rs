//! Test-only oracles, written without touching the library's own code paths.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Voxel payload for the fixture writer, already in its on-disk type.
pub enum Payload<'a> {
    U8(&'a [u8]),
    I16(&'a [i16]),
    F32(&'a [f32]),
}

/// Encodes a minimal single-file NIfTI-1 stream field by field. Only the
/// fields a reader needs are filled in; everything else stays zero.
pub fn fixture_nifti(
    shape: [usize; 3],
    spacing: [f32; 3],
    payload: Payload<'_>,
    big_endian: bool,
) -> Vec<u8> {
    let mut h = vec![0u8; 352];
    let put_i16 = |h: &mut Vec<u8>, at: usize, v: i16| {
        let b = if big_endian {
            v.to_be_bytes()
        } else {
            v.to_le_bytes()
        };
        h[at..at + 2].copy_from_slice(&b);
    };
    let put_i32 = |h: &mut Vec<u8>, at: usize, v: i32| {
        let b = if big_endian {
            v.to_be_bytes()
        } else {
            v.to_le_bytes()
        };
        h[at..at + 4].copy_from_slice(&b);
    };
    let put_f32 = |h: &mut Vec<u8>, at: usize, v: f32| {
        let b = if big_endian {
            v.to_be_bytes()
        } else {
            v.to_le_bytes()
        };
        h[at..at + 4].copy_from_slice(&b);
    };
    put_i32(&mut h, 0, 348);
    let dims = [
        3,
        shape[0] as i16,
        shape[1] as i16,
        shape[2] as i16,
        1,
        1,
        1,
        1,
    ];
    for (i, d) in dims.iter().enumerate() {
        put_i16(&mut h, 40 + 2 * i, *d);
    }
    let (code, bits) = match payload {
        Payload::U8(_) => (2, 8),
        Payload::I16(_) => (4, 16),
        Payload::F32(_) => (16, 32),
    };
    put_i16(&mut h, 70, code);
    put_i16(&mut h, 72, bits);
    let pix = [1.0, spacing[0], spacing[1], spacing[2], 1.0, 1.0, 1.0, 1.0];
    for (i, p) in pix.iter().enumerate() {
        put_f32(&mut h, 76 + 4 * i, *p);
    }
    put_f32(&mut h, 108, 352.0);
    put_f32(&mut h, 112, 1.0);
    h[344..348].copy_from_slice(b"n+1\0");
    match payload {
        Payload::U8(d) => h.extend_from_slice(d),
        Payload::I16(d) => {
            for v in d {
                h.extend(if big_endian {
                    v.to_be_bytes()
                } else {
                    v.to_le_bytes()
                });
            }
        }
        Payload::F32(d) => {
            for v in d {
                h.extend(if big_endian {
                    v.to_be_bytes()
                } else {
                    v.to_le_bytes()
                });
            }
        }
    }
    h
}

/// Dice as an exact fraction by walking both masks voxel by voxel.
pub fn dice_oracle(a: &[u8], b: &[u8]) -> (u64, u64) {
    assert_eq!(a.len(), b.len());
    let mut both = 0u64;
    let mut in_a = 0u64;
    let mut in_b = 0u64;
    for i in 0..a.len() {
        let pa = a[i] != 0;
        let pb = b[i] != 0;
        if pa && pb {
            both += 1;
        }
        if pa {
            in_a += 1;
        }
        if pb {
            in_b += 1;
        }
    }
    // 2|A∩B| / (|A| + |B|)
    (2 * both, in_a + in_b)
}

pub fn dice_oracle_f64(a: &[u8], b: &[u8]) -> f64 {
    let (num, den) = dice_oracle(a, b);
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Weighted sum over members in order, divided by `n`, plus `c`, computed
/// one voxel at a time.
pub fn embed_oracle(members: &[Vec<f64>], weights: &[f64], n: u32, c: f64) -> Vec<f32> {
    let len = members[0].len();
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let mut s = 0.0f64;
        for (m, w) in members.iter().zip(weights) {
            s += w * m[i];
        }
        out.push((s / f64::from(n) + c) as f32);
    }
    out
}

/// Random binary-ish label mask drawn from {0, 1, 2, 4}, with roughly
/// `density` of the voxels nonzero.
pub fn random_mask(rng: &mut ChaCha8Rng, len: usize, density: f64) -> Vec<u8> {
    (0..len)
        .map(|_| {
            if rng.random_bool(density) {
                [1u8, 2, 4][rng.random_range(0..3)]
            } else {
                0
            }
        })
        .collect()
}

/// Linear-interpolation percentile of a sorted sample, as numpy's default.
pub fn percentile_oracle(sorted: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}
