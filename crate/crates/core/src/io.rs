//! Little-endian binary containers.
//!
//! Four containers share one framing: a 4-byte magic, a `u32` version (1),
//! then a body of little-endian `u64`/`i64`/`f64` fields.
//!
//! | magic  | contents                                        |
//! |--------|-------------------------------------------------|
//! | `GCNT` | [`Dataset`]: features, labels, splits, graph    |
//! | `GCNW` | model checkpoint (see [`crate::autodiff::checkpoint`]) |
//! | `GCNE` | node embedding matrix plus provenance string    |
//! | `GCNP` | base predictions, same layout as `GCNE`         |
//!
//! `GCNT` body, in order: `n, d, num_classes, nnz, flags, d_edge` as `u64`
//! (flags bit 0 = edge weights present, bit 1 = edge features present);
//! `n·d` `f64` features row-major; `n` `i64` labels; train, valid and test
//! index arrays, each a `u64` length followed by `u64` entries; `n + 1`
//! `u64` row offsets; `nnz` `u64` column indices; then `nnz` `f64` weights
//! and `nnz·d_edge` `f64` edge features when flagged.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{CsrGraph, Dataset, Splits};
use crate::tensor::Tensor;

pub const VERSION: u32 = 1;
pub const DATASET_MAGIC: &[u8; 4] = b"GCNT";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GCNW";
pub const EMBEDDING_MAGIC: &[u8; 4] = b"GCNE";
pub const PREDICTION_MAGIC: &[u8; 4] = b"GCNP";

const FLAG_WEIGHTS: u64 = 1;
const FLAG_EDGE_FEATURES: u64 = 2;

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4]) -> Self {
        let mut w = Self::default();
        w.buf.extend_from_slice(magic);
        w.buf.extend_from_slice(&VERSION.to_le_bytes());
        w
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn i64s(&mut self, vs: &[i64]) {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn usizes(&mut self, vs: &[usize]) {
        for &v in vs {
            self.usize(v);
        }
    }

    pub fn prefixed_usizes(&mut self, vs: &[usize]) {
        self.usize(vs.len());
        self.usizes(vs);
    }

    pub fn string(&mut self, s: &str) {
        self.usize(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        if buf.len() < 8 {
            return Err(Error::Format("file too short for header".into()));
        }
        if &buf[..4] != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&buf[..4]),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        Ok(Self { buf, pos: 8 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length overflows usize".into()))
    }

    /// Reads a count that must fit in the remaining bytes at `elem` bytes each.
    fn count(&mut self, n: usize, elem: usize) -> Result<usize> {
        match n.checked_mul(elem) {
            Some(b) if b <= self.buf.len() - self.pos => Ok(n),
            _ => Err(Error::Format(format!("truncated: {n} elements declared"))),
        }
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let n = self.count(n, 8)?;
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn i64s(&mut self, n: usize) -> Result<Vec<i64>> {
        let n = self.count(n, 8)?;
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn usizes(&mut self, n: usize) -> Result<Vec<usize>> {
        let n = self.count(n, 8)?;
        (0..n).map(|_| self.usize()).collect()
    }

    pub fn prefixed_usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.usize()?;
        self.usizes(n)
    }

    pub fn string(&mut self) -> Result<String> {
        let n = self.usize()?;
        let n = self.count(n, 1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let g = &ds.graph;
    let mut w = Writer::new(DATASET_MAGIC);
    let mut flags = 0;
    if g.edge_weights().is_some() {
        flags |= FLAG_WEIGHTS;
    }
    if g.edge_features().is_some() {
        flags |= FLAG_EDGE_FEATURES;
    }
    w.usize(ds.num_nodes());
    w.usize(ds.feature_dim());
    w.usize(ds.num_classes);
    w.usize(g.num_edges());
    w.u64(flags);
    w.usize(g.edge_features().map_or(0, Tensor::cols));
    w.f64s(ds.features.data());
    w.i64s(&ds.labels);
    w.prefixed_usizes(&ds.splits.train);
    w.prefixed_usizes(&ds.splits.valid);
    w.prefixed_usizes(&ds.splits.test);
    w.usizes(g.row_offsets());
    w.usizes(g.col_indices());
    if let Some(wts) = g.edge_weights() {
        w.f64s(wts);
    }
    if let Some(ef) = g.edge_features() {
        w.f64s(ef.data());
    }
    w.finish()
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes, DATASET_MAGIC)?;
    let n = r.usize()?;
    let d = r.usize()?;
    let num_classes = r.usize()?;
    let nnz = r.usize()?;
    let flags = r.u64()?;
    let d_edge = r.usize()?;
    if flags & !(FLAG_WEIGHTS | FLAG_EDGE_FEATURES) != 0 {
        return Err(Error::Format(format!("unknown flags {flags:#x}")));
    }
    let feat_len = n
        .checked_mul(d)
        .ok_or_else(|| Error::Format("feature size overflow".into()))?;
    let features = Tensor::from_vec(n, d, r.f64s(feat_len)?)?;
    let labels = r.i64s(n)?;
    let splits = Splits {
        train: r.prefixed_usizes()?,
        valid: r.prefixed_usizes()?,
        test: r.prefixed_usizes()?,
    };
    let row_offsets = r.usizes(n.saturating_add(1))?;
    let col_indices = r.usizes(nnz)?;
    let weights = if flags & FLAG_WEIGHTS != 0 {
        Some(r.f64s(nnz)?)
    } else {
        None
    };
    let edge_features = if flags & FLAG_EDGE_FEATURES != 0 {
        let len = nnz
            .checked_mul(d_edge)
            .ok_or_else(|| Error::Format("edge feature size overflow".into()))?;
        Some(Tensor::from_vec(nnz, d_edge, r.f64s(len)?)?)
    } else {
        None
    };
    r.finish()?;
    let graph = CsrGraph::new(n, row_offsets, col_indices, weights, edge_features)?;
    Dataset::new(graph, features, labels, num_classes, splits)
}

pub fn save_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    fs::write(path, encode_dataset(ds))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}

/// A node-indexed matrix plus a free-form provenance string: the payload of
/// the `GCNE` and `GCNP` containers.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeMatrix {
    pub values: Tensor,
    pub provenance: String,
}

pub fn encode_node_matrix(magic: &[u8; 4], m: &NodeMatrix) -> Vec<u8> {
    let mut w = Writer::new(magic);
    w.usize(m.values.rows());
    w.usize(m.values.cols());
    w.f64s(m.values.data());
    w.string(&m.provenance);
    w.finish()
}

pub fn decode_node_matrix(magic: &[u8; 4], bytes: &[u8]) -> Result<NodeMatrix> {
    let mut r = Reader::new(bytes, magic)?;
    let n = r.usize()?;
    let d = r.usize()?;
    let len = n
        .checked_mul(d)
        .ok_or_else(|| Error::Format("matrix size overflow".into()))?;
    let values = Tensor::from_vec(n, d, r.f64s(len)?)?;
    let provenance = r.string()?;
    r.finish()?;
    Ok(NodeMatrix { values, provenance })
}

pub fn save_node_matrix(path: impl AsRef<Path>, magic: &[u8; 4], m: &NodeMatrix) -> Result<()> {
    fs::write(path, encode_node_matrix(magic, m))?;
    Ok(())
}

pub fn load_node_matrix(path: impl AsRef<Path>, magic: &[u8; 4]) -> Result<NodeMatrix> {
    decode_node_matrix(magic, &fs::read(path)?)
}
