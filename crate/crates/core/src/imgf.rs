//! IMGF raster files: `"IMGF"`, `u8` version, `u32` height, `u32` width,
//! `u32` channels, `u8` dtype (0 = f32), then the little-endian row-major
//! payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, IoContext, Result};
use crate::raster::Raster;

pub const MAGIC: &[u8; 4] = b"IMGF";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 0;
const HEADER_LEN: usize = 4 + 1 + 4 + 4 + 4 + 1;

pub fn encode(r: &Raster) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + r.data().len() * 4);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(r.height() as u32).to_le_bytes());
    out.extend_from_slice(&(r.width() as u32).to_le_bytes());
    out.extend_from_slice(&(r.channels() as u32).to_le_bytes());
    out.push(DTYPE_F32);
    for v in r.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<Raster> {
    let corrupt = |reason: String| Error::Corrupt { path: origin.to_path_buf(), reason };
    if bytes.len() < HEADER_LEN {
        return Err(corrupt(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Version { found: bytes[4] as u32, expected: VERSION as u32 });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let (h, w, c) = (u32_at(5), u32_at(9), u32_at(13));
    if bytes[17] != DTYPE_F32 {
        return Err(corrupt(format!("unsupported dtype tag {}", bytes[17])));
    }
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| corrupt("dimensions overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != n * 4 {
        return Err(corrupt(format!("payload has {} bytes, expected {}", payload.len(), n * 4)));
    }
    let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
    Raster::new(h, w, c, data)
}

pub fn write(path: &Path, r: &Raster) -> Result<()> {
    let mut f = fs::File::create(path).at(path)?;
    f.write_all(&encode(r)).at(path)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).at(path)?;
    decode(&bytes, path)
}
