//! CINE binary sequences and PGM frame export.
//!
//! CINE layout, little-endian:
//!
//! | offset | size | field                      |
//! |--------|------|----------------------------|
//! | 0      | 4    | magic `CINE`               |
//! | 4      | 2    | format version (u16)       |
//! | 6      | 12   | T, H, W (u32 each)         |
//! | 18     | 2    | scalar type code (u16)     |
//! | 20     | 4    | pixel spacing in mm (f32)  |
//! | 24     | T*H*W*4 | f32 payload, frame-major, row-major |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{CineSequence, Image};

pub const CINE_MAGIC: &[u8; 4] = b"CINE";
pub const CINE_VERSION: u16 = 1;
pub const CINE_HEADER_LEN: usize = 24;
/// Scalar type code of an f32 payload.
pub const SCALAR_F32: u16 = 1;

pub fn write_cine(path: impl AsRef<Path>, seq: &CineSequence<f32>) -> Result<()> {
    let (t, h, w) = (seq.len(), seq.height(), seq.width());
    let mut buf = Vec::with_capacity(CINE_HEADER_LEN + t * h * w * 4);
    buf.extend_from_slice(CINE_MAGIC);
    buf.extend_from_slice(&CINE_VERSION.to_le_bytes());
    for d in [t, h, w] {
        let d = u32::try_from(d).map_err(|_| Error::invalid("dimension exceeds u32"))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    buf.extend_from_slice(&SCALAR_F32.to_le_bytes());
    buf.extend_from_slice(&seq.pixel_spacing.to_le_bytes());
    for f in seq.frames() {
        for v in f.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

pub fn read_cine(path: impl AsRef<Path>) -> Result<CineSequence<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let truncated = |needed| Error::Truncated { path: path.to_path_buf(), needed, found: bytes.len() };
    if bytes.len() < 4 || &bytes[..4] != CINE_MAGIC {
        return Err(Error::BadMagic { path: path.to_path_buf(), expected: "CINE" });
    }
    if bytes.len() < CINE_HEADER_LEN {
        return Err(truncated(CINE_HEADER_LEN));
    }
    let version = u16_at(&bytes, 4);
    if version != CINE_VERSION {
        return Err(Error::VersionMismatch { path: path.to_path_buf(), found: version, expected: CINE_VERSION });
    }
    let (t, h, w) = (u32_at(&bytes, 6) as usize, u32_at(&bytes, 10) as usize, u32_at(&bytes, 14) as usize);
    let code = u16_at(&bytes, 18);
    let malformed = |detail: String| Error::Malformed { path: path.to_path_buf(), detail };
    if code != SCALAR_F32 {
        return Err(malformed(format!("unknown scalar type code {code}")));
    }
    if t == 0 || h == 0 || w == 0 {
        return Err(malformed(format!("empty dimensions {t}x{h}x{w}")));
    }
    let spacing = f32::from_le_bytes(bytes[20..24].try_into().expect("4 bytes"));
    let needed = CINE_HEADER_LEN + t * h * w * 4;
    if bytes.len() < needed {
        return Err(truncated(needed));
    }
    if bytes.len() > needed {
        return Err(malformed(format!("{} trailing bytes", bytes.len() - needed)));
    }
    let values: Vec<f32> = bytes[CINE_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let frames = values.chunks_exact(h * w).map(|c| Image::new(h, w, c.to_vec())).collect::<Result<Vec<_>>>()?;
    CineSequence::new(frames, spacing)
}

/// Binary 8-bit PGM (P5); intensities in `[0, 1]` map to `0..=255`.
pub fn write_pgm(path: impl AsRef<Path>, frame: &Image<f32>) -> Result<()> {
    let mut buf = format!("P5\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    buf.extend(frame.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, buf)?;
    Ok(())
}
