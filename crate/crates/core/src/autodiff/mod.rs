//! A small reverse-mode automatic differentiation tape over dense matrices.
//!
//! Operations are recorded on a [`Tape`] in execution order and return
//! [`Var`] handles. [`Tape::backward`] walks the record in exact reverse
//! order, producing gradients for every node and accumulating the
//! gradients of parameter leaves into their [`ParamStore`] entries.
//!
//! ```
//! use gcnkit::autodiff::{ParamStore, Tape};
//! use gcnkit::Tensor;
//!
//! let mut store = ParamStore::new();
//! let w = store.add("w", Tensor::from_rows(&[vec![2.0], vec![-1.0]]).unwrap());
//!
//! let mut tape = Tape::new();
//! let x = tape.constant(Tensor::from_rows(&[vec![1.0, 3.0]]).unwrap());
//! let wv = tape.param(&store, w);
//! let y = tape.matmul(x, wv).unwrap();
//! let loss = tape.sum(y).unwrap();
//! tape.backward(loss, &mut store).unwrap();
//! assert_eq!(store.get(w).grad.data(), &[1.0, 3.0]);
//! ```

pub mod checkpoint;
mod norm;
mod param;

pub use norm::{NormAxis, NormParams, NormState};
pub use param::{Adam, ParamId, ParamStore, Parameter};

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Softmax direction: normalize each row, or each column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

enum Op<'g> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddScaled(Var, Var, f64),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Mul(Var, Var),
    ScaleByEntry { x: Var, w: Var, row: usize },
    Spmm(&'g NormalizedAdjacency, Var),
    Dropout(Var, Vec<f64>),
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        axis: NormAxis,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    FixedNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Softmax(Var, Axis),
    LogSoftmaxRows(Var),
    Nll { logp: Var, targets: Vec<(usize, usize)> },
    Sum(Var),
}

struct Node<'g> {
    value: Tensor,
    op: Op<'g>,
}

/// Recorded computation. The lifetime ties the tape to any adjacency
/// operators it references.
pub struct Tape<'g> {
    nodes: Vec<Node<'g>>,
    check_finite: bool,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` if `v` does not
    /// influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.add_assign_scaled(&g, 1.0),
        None => *slot = Some(g),
    }
}

impl<'g> Tape<'g> {
    /// New tape. Finite-value checking is on in debug builds.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    /// Turns the per-op NaN/Inf check on or off.
    pub fn with_finite_check(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op<'g>) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::Numerical {
                epoch: 0,
                message: format!("non-finite value produced by op #{}", self.nodes.len()),
            });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Untracked input. It still receives a gradient in [`Gradients`].
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf holding the current value of a parameter; its gradient is
    /// accumulated into the store on backward.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.get(id).value.clone(),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.add_scaled_inner(a, b, 1.0, true)
    }

    /// `a + alpha · b`.
    pub fn add_scaled(&mut self, a: Var, b: Var, alpha: f64) -> Result<Var> {
        self.add_scaled_inner(a, b, alpha, false)
    }

    fn add_scaled_inner(&mut self, a: Var, b: Var, alpha: f64, plain: bool) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        va.check_same_shape(vb, "add")?;
        let out = if plain {
            va.zip_map(vb, |x, y| x + y)
        } else {
            va.zip_map(vb, |x, y| x + alpha * y)
        };
        let op = if plain {
            Op::Add(a, b)
        } else {
            Op::AddScaled(a, b, alpha)
        };
        self.push(out, op)
    }

    /// `x + 1·b` where `b` is a `1 × cols` row broadcast over every row.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(b));
        if vb.rows() != 1 || vb.cols() != vx.cols() {
            return Err(Error::Shape {
                op: "add_row",
                left: vx.shape(),
                right: vb.shape(),
            });
        }
        let bias = vb.row(0);
        let mut out = vx.clone();
        for i in 0..out.rows() {
            for (o, &b) in out.row_mut(i).iter_mut().zip(bias) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(x, b))
    }

    pub fn scale(&mut self, x: Var, alpha: f64) -> Result<Var> {
        let out = self.value(x).map(|v| alpha * v);
        self.push(out, Op::Scale(x, alpha))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn elementwise_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        va.check_same_shape(vb, "elementwise_mul")?;
        let out = va.zip_map(vb, |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    /// `out[i, j] = x[i, j] · w[row, j]`, or `x[i, j] · w[row, 0]` when `w`
    /// has a single column. Used for per-layer aggregation weights and
    /// learnable scalar coefficients.
    pub fn scale_by_entry(&mut self, x: Var, w: Var, row: usize) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        if row >= vw.rows() || (vw.cols() != 1 && vw.cols() != vx.cols()) {
            return Err(Error::Shape {
                op: "scale_by_entry",
                left: vx.shape(),
                right: vw.shape(),
            });
        }
        let out = if vw.cols() == 1 {
            let s = vw.get(row, 0);
            vx.map(|v| v * s)
        } else {
            Tensor::from_fn(vx.rows(), vx.cols(), |i, j| vx.get(i, j) * vw.get(row, j))
        };
        self.push(out, Op::ScaleByEntry { x, w, row })
    }

    /// Sparse-dense product `Â · x`.
    pub fn spmm(&mut self, adj: &'g NormalizedAdjacency, x: Var) -> Result<Var> {
        let out = adj.apply(self.value(x))?;
        self.push(out, Op::Spmm(adj, x))
    }

    /// Inverted dropout. Identity when not training or when `rate` is 0; in
    /// that case no node is recorded and no randomness is consumed.
    pub fn dropout(&mut self, x: Var, rate: f64, training: bool, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let vx = self.value(x);
        let data = vx.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::from_vec(vx.rows(), vx.cols(), data)?;
        self.push(out, Op::Dropout(x, mask))
    }

    /// `(x − E[x]) / sqrt(Var[x] + eps) ⊙ γ + θ`, statistics taken over the
    /// batch (per column) or per row, with the biased variance. Returns the
    /// output and the `(mean, variance)` vectors that were used.
    pub fn normalize(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        axis: NormAxis,
        eps: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let vx = self.value(x);
        self.check_affine(vx.cols(), gamma, beta)?;
        let (rows, cols) = vx.shape();
        if rows == 0 || cols == 0 {
            return Err(Error::Invalid("normalization of an empty tensor".into()));
        }
        let (groups, group_len) = match axis {
            NormAxis::Batch => (cols, rows),
            NormAxis::Layer => (rows, cols),
        };
        let at = |g: usize, k: usize| match axis {
            NormAxis::Batch => vx.get(k, g),
            NormAxis::Layer => vx.get(g, k),
        };
        let mut mean = vec![0.0; groups];
        let mut var = vec![0.0; groups];
        for g in 0..groups {
            let m = (0..group_len).map(|k| at(g, k)).sum::<f64>() / group_len as f64;
            let v = (0..group_len).map(|k| (at(g, k) - m).powi(2)).sum::<f64>() / group_len as f64;
            mean[g] = m;
            var[g] = v;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let xhat = Tensor::from_fn(rows, cols, |i, j| {
            let g = if axis == NormAxis::Batch { j } else { i };
            (vx.get(i, j) - mean[g]) * inv_std[g]
        });
        let out = self.affine(&xhat, gamma, beta);
        let var_out = self.push(
            out,
            Op::Norm {
                x,
                gamma,
                beta,
                axis,
                xhat,
                inv_std,
            },
        )?;
        Ok((var_out, mean, var))
    }

    /// Column normalization with fixed (running) statistics.
    pub fn normalize_fixed(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let vx = self.value(x);
        self.check_affine(vx.cols(), gamma, beta)?;
        if mean.len() != vx.cols() || var.len() != vx.cols() {
            return Err(Error::Invalid("running statistics have the wrong length".into()));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let xhat = Tensor::from_fn(vx.rows(), vx.cols(), |i, j| (vx.get(i, j) - mean[j]) * inv_std[j]);
        let out = self.affine(&xhat, gamma, beta);
        self.push(
            out,
            Op::FixedNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    fn check_affine(&self, cols: usize, gamma: Var, beta: Var) -> Result<()> {
        for v in [gamma, beta] {
            let s = self.shape(v);
            if s != (1, cols) {
                return Err(Error::Shape {
                    op: "normalize",
                    left: (1, cols),
                    right: s,
                });
            }
        }
        Ok(())
    }

    fn affine(&self, xhat: &Tensor, gamma: Var, beta: Var) -> Tensor {
        let (g, b) = (self.value(gamma).row(0), self.value(beta).row(0));
        Tensor::from_fn(xhat.rows(), xhat.cols(), |i, j| xhat.get(i, j) * g[j] + b[j])
    }

    /// Max-subtracted softmax along rows or columns.
    pub fn softmax(&mut self, x: Var, axis: Axis) -> Result<Var> {
        let vx = self.value(x);
        let out = match axis {
            Axis::Rows => softmax_rows(vx),
            Axis::Cols => softmax_rows(&vx.transpose()).transpose(),
        };
        self.push(out, Op::Softmax(x, axis))
    }

    /// Softmax of a `1 × n` row vector.
    pub fn softmax_vec(&mut self, v: Var) -> Result<Var> {
        if self.shape(v).0 != 1 {
            return Err(Error::Shape {
                op: "softmax_vec",
                left: (1, self.shape(v).1),
                right: self.shape(v),
            });
        }
        self.softmax(v, Axis::Rows)
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let out = log_softmax_rows(self.value(x));
        self.push(out, Op::LogSoftmaxRows(x))
    }

    /// Mean of `−logp[i, label_i]` over `(row, label)` targets.
    pub fn nll_loss(&mut self, logp: Var, targets: &[(usize, usize)]) -> Result<Var> {
        if targets.is_empty() {
            return Err(Error::Invalid("nll_loss over an empty mask".into()));
        }
        let vl = self.value(logp);
        let mut total = 0.0;
        for &(i, c) in targets {
            if i >= vl.rows() || c >= vl.cols() {
                return Err(Error::OutOfRange {
                    index: i.max(c),
                    bound: vl.rows().max(vl.cols()),
                });
            }
            total -= vl.get(i, c);
        }
        let out = Tensor::filled(1, 1, total / targets.len() as f64);
        self.push(
            out,
            Op::Nll {
                logp,
                targets: targets.to_vec(),
            },
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::filled(1, 1, self.value(x).sum());
        self.push(out, Op::Sum(x))
    }

    /// Reverse pass from a `1 × 1` loss. Parameter-leaf gradients are added to
    /// `store` (so repeated calls accumulate); all gradients are returned.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Invalid(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads)?;
            if let Op::Param(id) = node.op {
                store.get_mut(id).grad.add_assign_scaled(&g, 1.0);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<'g>, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                accumulate(&mut grads[a.0], g.matmul_t(val(*b))?);
                accumulate(&mut grads[b.0], val(*a).t_matmul(g)?);
            }
            Op::Add(a, b) => {
                accumulate(&mut grads[a.0], g.clone());
                accumulate(&mut grads[b.0], g.clone());
            }
            Op::AddScaled(a, b, alpha) => {
                accumulate(&mut grads[a.0], g.clone());
                accumulate(&mut grads[b.0], g.map(|v| alpha * v));
            }
            Op::AddRow(x, b) => {
                accumulate(&mut grads[x.0], g.clone());
                accumulate(&mut grads[b.0], column_sums(g));
            }
            Op::Scale(x, alpha) => accumulate(&mut grads[x.0], g.map(|v| alpha * v)),
            Op::Relu(x) => {
                let gx = g.zip_map(val(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                accumulate(&mut grads[x.0], gx);
            }
            Op::Mul(a, b) => {
                accumulate(&mut grads[a.0], g.zip_map(val(*b), |gv, bv| gv * bv));
                accumulate(&mut grads[b.0], g.zip_map(val(*a), |gv, av| gv * av));
            }
            Op::ScaleByEntry { x, w, row } => {
                let (vx, vw) = (val(*x), val(*w));
                let mut gw = Tensor::zeros(vw.rows(), vw.cols());
                let gx = if vw.cols() == 1 {
                    let s = vw.get(*row, 0);
                    let dot: f64 = g.data().iter().zip(vx.data()).map(|(a, b)| a * b).sum();
                    gw.set(*row, 0, dot);
                    g.map(|v| v * s)
                } else {
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            gw.set(*row, j, gw.get(*row, j) + g.get(i, j) * vx.get(i, j));
                        }
                    }
                    Tensor::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * vw.get(*row, j))
                };
                accumulate(&mut grads[x.0], gx);
                accumulate(&mut grads[w.0], gw);
            }
            Op::Spmm(adj, x) => accumulate(&mut grads[x.0], adj.apply_transpose(g)?),
            Op::Dropout(x, mask) => {
                let data = g.data().iter().zip(mask).map(|(a, m)| a * m).collect();
                accumulate(&mut grads[x.0], Tensor::from_vec(g.rows(), g.cols(), data)?);
            }
            Op::Norm {
                x,
                gamma,
                beta,
                axis,
                xhat,
                inv_std,
            } => {
                let gam = val(*gamma).row(0);
                accumulate(&mut grads[gamma.0], column_sums(&g.zip_map(xhat, |a, b| a * b)));
                accumulate(&mut grads[beta.0], column_sums(g));
                let dxhat = Tensor::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * gam[j]);
                accumulate(&mut grads[x.0], norm_input_grad(&dxhat, xhat, inv_std, *axis));
            }
            Op::FixedNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gam = val(*gamma).row(0);
                accumulate(&mut grads[gamma.0], column_sums(&g.zip_map(xhat, |a, b| a * b)));
                accumulate(&mut grads[beta.0], column_sums(g));
                let gx = Tensor::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * gam[j] * inv_std[j]);
                accumulate(&mut grads[x.0], gx);
            }
            Op::Softmax(x, axis) => {
                let y = &node.value;
                let gx = match axis {
                    Axis::Rows => softmax_rows_grad(y, g),
                    Axis::Cols => softmax_rows_grad(&y.transpose(), &g.transpose()).transpose(),
                };
                accumulate(&mut grads[x.0], gx);
            }
            Op::LogSoftmaxRows(x) => {
                let y = &node.value;
                let mut gx = g.clone();
                for i in 0..g.rows() {
                    let s: f64 = g.row(i).iter().sum();
                    for (o, &lp) in gx.row_mut(i).iter_mut().zip(y.row(i)) {
                        *o -= lp.exp() * s;
                    }
                }
                accumulate(&mut grads[x.0], gx);
            }
            Op::Nll { logp, targets } => {
                let shape = val(*logp).shape();
                let mut gl = Tensor::zeros(shape.0, shape.1);
                let scale = g.get(0, 0) / targets.len() as f64;
                for &(i, c) in targets {
                    gl.set(i, c, gl.get(i, c) - scale);
                }
                accumulate(&mut grads[logp.0], gl);
            }
            Op::Sum(x) => {
                let (r, c) = val(*x).shape();
                accumulate(&mut grads[x.0], Tensor::filled(r, c, g.get(0, 0)));
            }
        }
        Ok(())
    }
}

fn column_sums(t: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, t.cols());
    for i in 0..t.rows() {
        for (o, &v) in out.row_mut(0).iter_mut().zip(t.row(i)) {
            *o += v;
        }
    }
    out
}

/// `dx = inv_std / N · (N·dxhat − Σ dxhat − xhat · Σ dxhat·xhat)` within each
/// normalization group.
fn norm_input_grad(dxhat: &Tensor, xhat: &Tensor, inv_std: &[f64], axis: NormAxis) -> Tensor {
    let (rows, cols) = dxhat.shape();
    let mut out = Tensor::zeros(rows, cols);
    match axis {
        NormAxis::Batch => {
            let n = rows as f64;
            for j in 0..cols {
                let (mut s1, mut s2) = (0.0, 0.0);
                for i in 0..rows {
                    s1 += dxhat.get(i, j);
                    s2 += dxhat.get(i, j) * xhat.get(i, j);
                }
                for i in 0..rows {
                    let v = inv_std[j] / n * (n * dxhat.get(i, j) - s1 - xhat.get(i, j) * s2);
                    out.set(i, j, v);
                }
            }
        }
        NormAxis::Layer => {
            let n = cols as f64;
            for i in 0..rows {
                let (d, xh) = (dxhat.row(i), xhat.row(i));
                let s1: f64 = d.iter().sum();
                let s2: f64 = d.iter().zip(xh).map(|(a, b)| a * b).sum();
                for j in 0..cols {
                    out.set(i, j, inv_std[i] / n * (n * d[j] - s1 - xh[j] * s2));
                }
            }
        }
    }
    out
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}

/// Row-wise log-softmax with max subtraction.
pub fn log_softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

fn softmax_rows_grad(y: &Tensor, g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(y.rows(), y.cols());
    for i in 0..y.rows() {
        let dot: f64 = y.row(i).iter().zip(g.row(i)).map(|(a, b)| a * b).sum();
        for j in 0..y.cols() {
            out.set(i, j, y.get(i, j) * (g.get(i, j) - dot));
        }
    }
    out
}
