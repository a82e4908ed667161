//! Representation cache: `<dir>/<checkpoint id>/<utterance id>.arr`, each
//! file `"MGFA" | rank: u32 | dims: u64 × rank | f64 × Π dims`, all
//! little-endian.

use std::fs;
use std::path::{Path, PathBuf};

use crate::autodiff::Array;
use crate::error::{Error, Result};

pub const ARRAY_MAGIC: &[u8; 4] = b"MGFA";

pub fn encode_array(a: &Array) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * a.rank() + 8 * a.len());
    out.extend_from_slice(ARRAY_MAGIC);
    out.extend_from_slice(&(a.rank() as u32).to_le_bytes());
    for &d in a.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in a.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_array(bytes: &[u8]) -> Result<Array> {
    let bad = |why: &str| Error::CorruptCache(why.to_string());
    if bytes.len() < 8 || &bytes[..4] != ARRAY_MAGIC {
        return Err(bad("missing MGFA header"));
    }
    let rank = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let header = 8 + 8 * rank;
    if bytes.len() < header {
        return Err(bad("truncated shape"));
    }
    let shape: Vec<usize> = bytes[8..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
        .collect();
    let count: usize = shape.iter().product();
    if bytes.len() != header + 8 * count {
        return Err(bad("data length does not match shape"));
    }
    let data = bytes[header..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Array::new(shape, data)
}

/// Cache location for one utterance under one checkpoint.
pub fn cache_path(dir: &Path, checkpoint_id: &str, utterance_id: &str) -> PathBuf {
    dir.join(checkpoint_id).join(format!("{utterance_id}.arr"))
}

pub fn write_array(path: &Path, a: &Array) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("arr.tmp");
    fs::write(&tmp, encode_array(a)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_array(path: &Path) -> Result<Array> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_array(&bytes)
}
