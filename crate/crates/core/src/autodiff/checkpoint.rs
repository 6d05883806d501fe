//! `GCNW` checkpoints: an ordered list of named tensors.
//!
//! Body: `u64` record count, then per record a `u64` name length, the UTF-8
//! name, `u64` rows, `u64` cols and `rows·cols` little-endian `f64` values.

use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::io::{Reader, Writer, CHECKPOINT_MAGIC};
use crate::tensor::Tensor;

pub type Records = Vec<(String, Tensor)>;

pub fn encode(records: &[(String, Tensor)]) -> Vec<u8> {
    let mut w = Writer::new(CHECKPOINT_MAGIC);
    w.usize(records.len());
    for (name, t) in records {
        w.string(name);
        w.usize(t.rows());
        w.usize(t.cols());
        w.f64s(t.data());
    }
    w.finish()
}

pub fn decode(bytes: &[u8]) -> Result<Records> {
    let mut r = Reader::new(bytes, CHECKPOINT_MAGIC)?;
    let n = r.usize()?;
    let mut out = Vec::new();
    for _ in 0..n {
        let name = r.string()?;
        let rows = r.usize()?;
        let cols = r.usize()?;
        let data = r.f64s(rows.saturating_mul(cols))?;
        out.push((name, Tensor::from_vec(rows, cols, data)?));
    }
    r.finish()?;
    Ok(out)
}

pub fn save(path: impl AsRef<Path>, records: &[(String, Tensor)]) -> Result<()> {
    fs::write(path, encode(records))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Records> {
    decode(&fs::read(path)?)
}
