//! Tensor files: a 4-byte magic, `u32` version, a `u32` metadata count and
//! that many `u32` metadata words, a `u32` tensor count, then per tensor
//! `rows u32`, `cols u32` and `rows*cols` `f32` values. All little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::pca::Reader;

pub(crate) const VERSION: u32 = 1;

pub(crate) fn encode(magic: &[u8; 4], meta: &[u32], tensors: &[&Matrix]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    for m in meta {
        out.extend_from_slice(&m.to_le_bytes());
    }
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for &v in t.as_slice() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub(crate) fn decode(bytes: &[u8], magic: &[u8; 4], name: &str) -> Result<(Vec<u32>, Vec<Matrix>)> {
    let mut r = Reader { bytes, pos: 0, name };
    if r.take(4)? != magic {
        return Err(Error::format(
            name,
            format!("bad magic, expected {:?}", String::from_utf8_lossy(magic)),
        ));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(name, format!("unsupported version {version}")));
    }
    let n_meta = r.u32()? as usize;
    let meta = (0..n_meta).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|&n| n * 4 <= bytes.len())
            .ok_or_else(|| Error::format(name, "tensor shape exceeds file size"))?;
        let data = (0..n).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
        tensors.push(Matrix::new(rows, cols, data).map_err(|e| Error::format(name, e.to_string()))?);
    }
    if r.pos != bytes.len() {
        return Err(Error::format(name, "trailing bytes after last tensor"));
    }
    Ok((meta, tensors))
}

pub(crate) fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::Path(path.to_path_buf()));
    }
    fs::read(path).map_err(|e| Error::io(path, e))
}
