//! Graph storage in compressed sparse-row form, the GCN propagation operator,
//! subgraph extraction and edge-feature aggregation.
//!
//! Every graph in the crate is a [`CsrGraph`]. Undirected inputs are stored as
//! symmetric directed graphs: each undirected edge `{u, v}` appears as both
//! `u -> v` and `v -> u`.

mod dataset;
mod sbm;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

pub use dataset::{load_feature_file, load_label_file, load_split_files, Dataset, Splits};
pub use sbm::{generate_sbm, SbmParams};

use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

/// Compressed sparse-row adjacency with optional per-edge weights and
/// per-edge feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrGraph {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    edge_weights: Option<Vec<f64>>,
    edge_features: Option<Tensor>,
}

impl CsrGraph {
    /// Assembles a graph from raw CSR arrays, validating every structural
    /// invariant.
    pub fn new(
        num_nodes: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        edge_weights: Option<Vec<f64>>,
        edge_features: Option<Tensor>,
    ) -> Result<Self> {
        if row_offsets.len() != num_nodes + 1 {
            return invalid(format!(
                "row_offsets has length {}, expected {}",
                row_offsets.len(),
                num_nodes + 1
            ));
        }
        if row_offsets[0] != 0 || row_offsets[num_nodes] != col_indices.len() {
            return invalid("row_offsets must start at 0 and end at the edge count");
        }
        for i in 0..num_nodes {
            let (start, end) = (row_offsets[i], row_offsets[i + 1]);
            if start > end || end > col_indices.len() {
                return invalid(format!("row_offsets decreases at row {i}"));
            }
            let row = &col_indices[start..end];
            for (pos, &c) in row.iter().enumerate() {
                if c >= num_nodes {
                    return Err(Error::OutOfRange {
                        index: c,
                        bound: num_nodes,
                    });
                }
                if pos > 0 && row[pos - 1] >= c {
                    return invalid(format!("row {i} is not strictly increasing"));
                }
            }
        }
        if let Some(w) = &edge_weights {
            if w.len() != col_indices.len() {
                return invalid("edge_weights length differs from edge count");
            }
        }
        if let Some(f) = &edge_features {
            if f.rows() != col_indices.len() {
                return invalid("edge_features row count differs from edge count");
            }
        }
        Ok(Self {
            num_nodes,
            row_offsets,
            col_indices,
            edge_weights,
            edge_features,
        })
    }

    /// Builds a directed graph from an edge list. Rows are sorted and
    /// duplicate edges dropped, keeping the first occurrence.
    pub fn from_directed_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        Self::build(num_nodes, edges, None)
    }

    /// Builds a symmetric graph: each `(u, v)` is stored as `u -> v` and
    /// `v -> u`. Self-loops are kept once.
    pub fn from_undirected_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let sym: Vec<(usize, usize)> = edges
            .iter()
            .flat_map(|&(u, v)| [(u, v), (v, u)])
            .collect();
        Self::build(num_nodes, &sym, None)
    }

    /// Directed edges, each carrying one feature row of `features`.
    pub fn from_directed_edges_with_features(
        num_nodes: usize,
        edges: &[(usize, usize)],
        features: &Tensor,
    ) -> Result<Self> {
        if features.rows() != edges.len() {
            return invalid("one feature row per edge is required");
        }
        Self::build(num_nodes, edges, Some(features))
    }

    fn build(num_nodes: usize, edges: &[(usize, usize)], features: Option<&Tensor>) -> Result<Self> {
        for &(u, v) in edges {
            for idx in [u, v] {
                if idx >= num_nodes {
                    return Err(Error::OutOfRange {
                        index: idx,
                        bound: num_nodes,
                    });
                }
            }
        }
        // stable sort keeps first occurrence first among duplicates
        let mut order: Vec<usize> = (0..edges.len()).collect();
        order.sort_by_key(|&e| edges[e]);
        order.dedup_by_key(|e| edges[*e]);

        let mut row_offsets = vec![0usize; num_nodes + 1];
        for &e in &order {
            row_offsets[edges[e].0 + 1] += 1;
        }
        for i in 0..num_nodes {
            row_offsets[i + 1] += row_offsets[i];
        }
        let col_indices = order.iter().map(|&e| edges[e].1).collect();
        let edge_features = features.map(|f| f.select_rows(&order));
        Ok(Self {
            num_nodes,
            row_offsets,
            col_indices,
            edge_weights: None,
            edge_features,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of stored (directed) edges.
    pub fn num_edges(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn edge_weights(&self) -> Option<&[f64]> {
        self.edge_weights.as_deref()
    }

    pub fn edge_features(&self) -> Option<&Tensor> {
        self.edge_features.as_ref()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[node]..self.row_offsets[node + 1]]
    }

    /// Weights of the out-edges of `node`, aligned with [`Self::neighbors`].
    /// Unweighted graphs report weight 1 for every edge.
    pub fn neighbor_weights(&self, node: usize) -> impl Iterator<Item = f64> + '_ {
        let range = self.row_offsets[node]..self.row_offsets[node + 1];
        let weights = self.edge_weights.as_deref();
        range.map(move |e| weights.map_or(1.0, |w| w[e]))
    }

    pub fn degree(&self, node: usize) -> usize {
        self.row_offsets[node + 1] - self.row_offsets[node]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes).map(|i| self.degree(i)).collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// All stored directed edges in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes).flat_map(move |u| self.neighbors(u).iter().map(move |&v| (u, v)))
    }

    pub fn is_symmetric(&self) -> bool {
        self.edges().all(|(u, v)| self.has_edge(v, u))
    }

    pub fn has_self_loops(&self) -> bool {
        (0..self.num_nodes).any(|u| self.has_edge(u, u))
    }

    /// Same structure with the given per-edge weights.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.num_edges() {
            return invalid("edge_weights length differs from edge count");
        }
        self.edge_weights = Some(weights);
        Ok(self)
    }

    /// Dense adjacency (edge weight, or 1 when unweighted).
    pub fn to_dense(&self) -> Tensor {
        let mut dense = Tensor::zeros(self.num_nodes, self.num_nodes);
        for u in 0..self.num_nodes {
            for (&v, w) in self.neighbors(u).iter().zip(self.neighbor_weights(u)) {
                dense.set(u, v, w);
            }
        }
        dense
    }
}

/// Reads a whitespace-separated `src dst` edge list of 0-based node ids and
/// returns the symmetrized, deduplicated graph.
pub fn load_edge_list(path: impl AsRef<Path>, num_nodes: usize) -> Result<CsrGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let mut fields = line.split_whitespace();
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(parse_err(format!("expected \"src dst\", got {line:?}")));
        };
        let src: usize = a.parse().map_err(|e| parse_err(format!("{a:?}: {e}")))?;
        let dst: usize = b.parse().map_err(|e| parse_err(format!("{b:?}: {e}")))?;
        edges.push((src, dst));
    }
    CsrGraph::from_undirected_edges(num_nodes, &edges)
}

/// `D̂^{-1/2} (A + I) D̂^{-1/2}` stored as a weighted [`CsrGraph`], with
/// `D̂ = deg + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    graph: CsrGraph,
}

impl NormalizedAdjacency {
    pub fn graph(&self) -> &CsrGraph {
        &self.graph
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes
    }

    /// Dense copy of the operator, for oracles and small fixtures.
    pub fn to_dense(&self) -> Tensor {
        self.graph.to_dense()
    }

    /// `Â · x`.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.rows() != self.num_nodes() {
            return Err(Error::Shape {
                op: "spmm",
                left: (self.num_nodes(), self.num_nodes()),
                right: x.shape(),
            });
        }
        let g = &self.graph;
        let weights = g.edge_weights.as_deref().expect("normalized graphs are weighted");
        let cols = x.cols();
        let mut out = Tensor::zeros(x.rows(), cols);
        for i in 0..g.num_nodes {
            let out_row = out.row_mut(i);
            for e in g.row_offsets[i]..g.row_offsets[i + 1] {
                let w = weights[e];
                for (o, &v) in out_row.iter_mut().zip(x.row(g.col_indices[e])) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }

    /// `Âᵀ · x`, computed by scattering along stored edges.
    pub fn apply_transpose(&self, x: &Tensor) -> Result<Tensor> {
        if x.rows() != self.num_nodes() {
            return Err(Error::Shape {
                op: "spmm_transpose",
                left: (self.num_nodes(), self.num_nodes()),
                right: x.shape(),
            });
        }
        let g = &self.graph;
        let weights = g.edge_weights.as_deref().expect("normalized graphs are weighted");
        let mut out = Tensor::zeros(x.rows(), x.cols());
        for i in 0..g.num_nodes {
            for e in g.row_offsets[i]..g.row_offsets[i + 1] {
                let w = weights[e];
                let j = g.col_indices[e];
                for (o, &v) in out.row_mut(j).iter_mut().zip(x.row(i)) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }
}

/// Adds a self-loop to every node and weights edge `(i, j)` by
/// `1 / sqrt((deg_i + 1)(deg_j + 1))`.
///
/// The input must be symmetric and loop-free.
pub fn symmetric_normalize(graph: &CsrGraph) -> Result<NormalizedAdjacency> {
    if graph.has_self_loops() {
        return invalid("graph already has self-loops");
    }
    if !graph.is_symmetric() {
        return invalid("graph is not symmetric");
    }
    let n = graph.num_nodes;
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / ((graph.degree(i) + 1) as f64).sqrt())
        .collect();

    let mut row_offsets = Vec::with_capacity(n + 1);
    let mut col_indices = Vec::with_capacity(graph.num_edges() + n);
    let mut weights = Vec::with_capacity(graph.num_edges() + n);
    row_offsets.push(0);
    for i in 0..n {
        let mut placed = false;
        for &j in graph.neighbors(i) {
            if !placed && j > i {
                col_indices.push(i);
                weights.push(inv_sqrt[i] * inv_sqrt[i]);
                placed = true;
            }
            col_indices.push(j);
            weights.push(inv_sqrt[i] * inv_sqrt[j]);
        }
        if !placed {
            col_indices.push(i);
            weights.push(inv_sqrt[i] * inv_sqrt[i]);
        }
        row_offsets.push(col_indices.len());
    }
    Ok(NormalizedAdjacency {
        graph: CsrGraph {
            num_nodes: n,
            row_offsets,
            col_indices,
            edge_weights: Some(weights),
            edge_features: None,
        },
    })
}

/// Subgraph induced by `nodes`. Node `nodes[k]` becomes node `k`; the second
/// return value maps old ids to new ones.
pub fn induced_subgraph(graph: &CsrGraph, nodes: &[usize]) -> Result<(CsrGraph, HashMap<usize, usize>)> {
    let mut mapping = HashMap::with_capacity(nodes.len());
    for (new, &old) in nodes.iter().enumerate() {
        if old >= graph.num_nodes {
            return Err(Error::OutOfRange {
                index: old,
                bound: graph.num_nodes,
            });
        }
        if mapping.insert(old, new).is_some() {
            return invalid(format!("node {old} listed twice"));
        }
    }
    let mut rows: Vec<Vec<(usize, usize)>> = Vec::with_capacity(nodes.len());
    for &old in nodes {
        let start = graph.row_offsets[old];
        let mut row: Vec<(usize, usize)> = graph
            .neighbors(old)
            .iter()
            .enumerate()
            .filter_map(|(k, v)| mapping.get(v).map(|&nv| (nv, start + k)))
            .collect();
        row.sort_unstable();
        rows.push(row);
    }
    let mut row_offsets = vec![0];
    let mut col_indices = Vec::new();
    let mut kept = Vec::new();
    for row in &rows {
        for &(c, e) in row {
            col_indices.push(c);
            kept.push(e);
        }
        row_offsets.push(col_indices.len());
    }
    let edge_weights = graph
        .edge_weights
        .as_ref()
        .map(|w| kept.iter().map(|&e| w[e]).collect());
    let edge_features = graph.edge_features.as_ref().map(|f| f.select_rows(&kept));
    let sub = CsrGraph {
        num_nodes: nodes.len(),
        row_offsets,
        col_indices,
        edge_weights,
        edge_features,
    };
    Ok((sub, mapping))
}

/// Node features formed by summing the feature vectors of each node's
/// stored out-edges.
pub fn aggregate_edge_features(graph: &CsrGraph) -> Result<Tensor> {
    let Some(features) = &graph.edge_features else {
        return invalid("graph carries no edge features");
    };
    let mut out = Tensor::zeros(graph.num_nodes, features.cols());
    for i in 0..graph.num_nodes {
        for e in graph.row_offsets[i]..graph.row_offsets[i + 1] {
            let src = features.row(e);
            for (o, &v) in out.row_mut(i).iter_mut().zip(src) {
                *o += v;
            }
        }
    }
    Ok(out)
}
