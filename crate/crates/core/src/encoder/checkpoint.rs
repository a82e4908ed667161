//! `MGF1` checkpoint container.
//!
//! ```text
//! "MGF1" | version: u32 | meta_len: u64 | meta: JSON (UTF-8)
//!        | n_arrays: u32 | { name_len: u32 | name | rank: u32 | dims: u64 × rank | f64 × Π dims }*
//! ```
//!
//! All integers and floats are little-endian. Writes go to a temporary
//! file that is renamed into place.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::autodiff::Array;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MGF1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointFile {
    pub metadata: serde_json::Value,
    pub arrays: Vec<(String, Array)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptCheckpoint(format!("truncated at byte {}", self.at)))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl CheckpointFile {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.metadata)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, arr) in &self.arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(arr.rank() as u32).to_le_bytes());
            for &d in arr.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in arr.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::NotCheckpoint);
        }
        let mut r = Reader { bytes, at: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let meta_len = r.u64()? as usize;
        let metadata = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| Error::CorruptCheckpoint(format!("metadata: {e}")))?;
        let n = r.u32()?;
        let mut arrays = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::CorruptCheckpoint("array name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::CorruptCheckpoint(format!("{name}: shape overflow")))?;
            let raw = r.take(count.checked_mul(8).ok_or_else(|| {
                Error::CorruptCheckpoint(format!("{name}: shape overflow"))
            })?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            arrays.push((name, Array::new(shape, data)?));
        }
        if r.at != bytes.len() {
            return Err(Error::CorruptCheckpoint("trailing bytes".into()));
        }
        Ok(Self { metadata, arrays })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.encode()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn array(&self, name: &str) -> Option<&Array> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }
}

/// Hex SHA-256 of a file's bytes; used as a checkpoint id.
pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}
