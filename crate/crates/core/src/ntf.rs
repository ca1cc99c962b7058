//! `NTF1` tensor files: magic `NTF1`, little-endian `u32` rank, `rank` little-endian
//! `u32` dims, then row-major little-endian `f32` values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"NTF1";

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 4 * t.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &x in t.data() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut r = bytes;
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(|_| bad("truncated header"))?;
    if &word != MAGIC {
        return Err(bad("bad magic"));
    }
    r.read_exact(&mut word).map_err(|_| bad("truncated header"))?;
    let rank = u32::from_le_bytes(word) as usize;
    if rank > 8 {
        return Err(bad("rank too large"));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        r.read_exact(&mut word).map_err(|_| bad("truncated dims"))?;
        shape.push(u32::from_le_bytes(word) as usize);
    }
    let n: usize = shape.iter().product();
    if r.len() != 4 * n {
        return Err(bad(&format!(
            "expected {} payload bytes, found {}",
            4 * n,
            r.len()
        )));
    }
    let data = r
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Tensor::new(&shape, data).map_err(|e| bad(&e.to_string()))
}

pub fn save(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path.as_ref())?;
    f.write_all(&encode(t))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode(&bytes, path)
}
