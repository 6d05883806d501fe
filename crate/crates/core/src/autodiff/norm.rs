use super::{ParamId, ParamStore, Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Which entries share normalization statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormAxis {
    /// Per column, over the rows of the batch (batch normalization).
    Batch,
    /// Per row, over its columns (layer normalization).
    Layer,
}

/// Running statistics and constants of one normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    /// Weight of the previous running value in each update.
    pub momentum: f64,
}

impl NormState {
    pub fn new(dim: usize) -> Self {
        Self {
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            eps: 1e-5,
            momentum: 0.9,
        }
    }

    fn update(&mut self, mean: &[f64], var: &[f64]) {
        let m = self.momentum;
        for (r, &b) in self.running_mean.iter_mut().zip(mean) {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, &b) in self.running_var.iter_mut().zip(var) {
            *r = m * *r + (1.0 - m) * b;
        }
    }
}

/// Learnable scale/shift plus running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub axis: NormAxis,
    pub state: NormState,
}

impl NormParams {
    /// Registers `γ = 1`, `θ = 0` of width `dim` under `prefix`.
    pub fn register(store: &mut ParamStore, prefix: &str, dim: usize, axis: NormAxis) -> Self {
        let gamma = store.add(format!("{prefix}.gamma"), Tensor::filled(1, dim, 1.0));
        let beta = store.add(format!("{prefix}.beta"), Tensor::zeros(1, dim));
        Self {
            gamma,
            beta,
            axis,
            state: NormState::new(dim),
        }
    }

    /// Normalizes `x`. Batch statistics (and a running-stat update) in
    /// training mode for [`NormAxis::Batch`]; running statistics otherwise.
    /// Layer normalization always uses per-row statistics.
    pub fn forward<'g>(
        &mut self,
        tape: &mut Tape<'g>,
        store: &ParamStore,
        x: Var,
        training: bool,
    ) -> Result<Var> {
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        match (self.axis, training) {
            (NormAxis::Batch, true) => {
                let (out, mean, var) = tape.normalize(x, gamma, beta, NormAxis::Batch, self.state.eps)?;
                self.state.update(&mean, &var);
                Ok(out)
            }
            (NormAxis::Batch, false) => tape.normalize_fixed(
                x,
                gamma,
                beta,
                &self.state.running_mean,
                &self.state.running_var,
                self.state.eps,
            ),
            (NormAxis::Layer, _) => Ok(tape.normalize(x, gamma, beta, NormAxis::Layer, self.state.eps)?.0),
        }
    }
}
