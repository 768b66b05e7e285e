//! Binary matrix blobs: a 16-byte little-endian header
//! `{magic "AWEF", version u32, rows u32, cols u32}` followed by
//! `rows × cols` little-endian `f32` values in row-major order.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"AWEF";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

pub fn encode(rows: usize, cols: usize, data: &[f32]) -> Vec<u8> {
    debug_assert_eq!(rows * cols, data.len());
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a blob; `name` identifies it in integrity errors.
pub fn decode(name: &str, bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    let integrity = |msg: String| Error::Integrity {
        name: name.to_string(),
        msg,
    };
    if bytes.len() < HEADER_LEN {
        return Err(integrity(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(integrity("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let version = word(4);
    if version != VERSION as usize {
        return Err(integrity(format!("unsupported version {version}")));
    }
    let (rows, cols) = (word(8), word(12));
    let expected = HEADER_LEN + 4 * rows * cols;
    if bytes.len() != expected {
        return Err(integrity(format!(
            "{rows}x{cols} payload needs {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((rows, cols, data))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write(path: &Path, rows: usize, cols: usize, data: &[f32]) -> Result<String> {
    let bytes = encode(rows, cols, data);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn read(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&path.display().to_string(), &bytes)
}
