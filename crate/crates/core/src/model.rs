//! GCN with initial and adaptive residual connections and softmax
//! layer aggregation, plus the plain stacked-GCN baseline.
//!
//! One forward pass of the residual model:
//!
//! ```text
//! X0 = Linear(X)
//! for k in 1..=K:
//!     H  = Dropout(Relu(Norm(Â · X(k-1) · W_k)))
//!     Xk = H + α·X0 + β·X(k-1)
//! Z = Σ_k softmax(w)_k ⊙ Xk
//! out = LogSoftmax(Linear(Z))
//! ```
//!
//! The pre-activated variant moves `Norm → Relu → Dropout` in front of the
//! convolution. The plain baseline stacks `conv → Norm → Relu → Dropout`
//! with neither residual terms nor aggregation.

use rand::Rng as _;

use crate::autodiff::checkpoint::Records;
use crate::autodiff::{Axis, NormAxis, NormParams, ParamId, ParamStore, Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// Normalization applied after each convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    Batch,
    Layer,
    None,
}

/// How layer outputs are combined into `Z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Softmax-weighted sum over all `K` layer outputs.
    SoftmaxLayer,
    /// Only the last layer output.
    LastLayer,
}

/// Shape of the layer-aggregation weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationWeights {
    /// One scalar per layer (`K × 1`).
    Scalar,
    /// One weight per layer and hidden feature (`K × hidden`), softmaxed
    /// across layers independently per feature.
    PerFeature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    GcnRes,
    PlainGcn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnResConfig {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub layers: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Learn α and β as scalars, initialized at the values above.
    pub learnable_coefficients: bool,
    pub dropout: f64,
    pub norm: NormKind,
    pub pre_activated: bool,
    pub aggregation: Aggregation,
    pub aggregation_weights: AggregationWeights,
}

impl GcnResConfig {
    /// Residual model with the reference coefficients α = 0.2, β = 0.7.
    pub fn gcn_res(input_dim: usize, num_classes: usize, layers: usize) -> Self {
        Self {
            architecture: Architecture::GcnRes,
            input_dim,
            hidden_dim: 64,
            num_classes,
            layers,
            alpha: 0.2,
            beta: 0.7,
            learnable_coefficients: false,
            dropout: 0.5,
            norm: NormKind::Batch,
            pre_activated: false,
            aggregation: Aggregation::SoftmaxLayer,
            aggregation_weights: AggregationWeights::Scalar,
        }
    }

    /// Baseline without residuals, normalization or layer aggregation.
    pub fn plain_gcn(input_dim: usize, num_classes: usize, layers: usize) -> Self {
        Self {
            architecture: Architecture::PlainGcn,
            alpha: 0.0,
            beta: 0.0,
            norm: NormKind::None,
            aggregation: Aggregation::LastLayer,
            ..Self::gcn_res(input_dim, num_classes, layers)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return invalid("model needs at least one layer");
        }
        if self.input_dim == 0 || self.hidden_dim == 0 || self.num_classes == 0 {
            return invalid("model dimensions must be positive");
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return invalid("alpha and beta must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return invalid(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    fn register(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), glorot(fan_in, fan_out, rng)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(1, fan_out)),
        }
    }

    fn forward(&self, tape: &mut Tape<'_>, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let h = tape.matmul(x, w)?;
        tape.add_row(h, b)
    }
}

/// Glorot-uniform initialization, `U(−a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(fan_in, fan_out, |_, _| rng.random_range(-a..=a))
}

/// Result of one forward pass.
pub struct ForwardOutput {
    /// `n × num_classes` log-probabilities.
    pub log_probs: Var,
    /// `X(0), X(1), …, X(K)`, each `n × hidden`.
    pub states: Vec<Var>,
    /// `Z` before the output projection.
    pub aggregated: Var,
}

/// Parameters and running statistics of a GCN_res (or plain GCN) model.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnResModel {
    config: GcnResConfig,
    params: ParamStore,
    input: Linear,
    convs: Vec<ParamId>,
    norms: Vec<Option<NormParams>>,
    aggregation: ParamId,
    output: Linear,
    alpha: Option<ParamId>,
    beta: Option<ParamId>,
}

impl GcnResModel {
    pub fn new(config: GcnResConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::derived(seed, &[0x1417]);
        let mut params = ParamStore::new();
        let h = config.hidden_dim;
        let input = Linear::register(&mut params, "input", config.input_dim, h, &mut rng);
        let mut convs = Vec::with_capacity(config.layers);
        let mut norms = Vec::with_capacity(config.layers);
        for k in 0..config.layers {
            convs.push(params.add(format!("conv.{k}.weight"), glorot(h, h, &mut rng)));
            let axis = match config.norm {
                NormKind::Batch => Some(NormAxis::Batch),
                NormKind::Layer => Some(NormAxis::Layer),
                NormKind::None => None,
            };
            norms.push(axis.map(|a| NormParams::register(&mut params, &format!("norm.{k}"), h, a)));
        }
        let agg_cols = match config.aggregation_weights {
            AggregationWeights::Scalar => 1,
            AggregationWeights::PerFeature => h,
        };
        let aggregation = params.add("aggregation", Tensor::zeros(config.layers, agg_cols));
        let output = Linear::register(&mut params, "output", h, config.num_classes, &mut rng);
        let (alpha, beta) = if config.learnable_coefficients {
            (
                Some(params.add("alpha", Tensor::filled(1, 1, config.alpha))),
                Some(params.add("beta", Tensor::filled(1, 1, config.beta))),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            config,
            params,
            input,
            convs,
            norms,
            aggregation,
            output,
            alpha,
            beta,
        })
    }

    pub fn config(&self) -> &GcnResConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn input_weight(&self) -> ParamId {
        self.input.weight
    }

    pub fn input_bias(&self) -> ParamId {
        self.input.bias
    }

    pub fn conv_weight(&self, layer: usize) -> ParamId {
        self.convs[layer]
    }

    pub fn aggregation_weights(&self) -> ParamId {
        self.aggregation
    }

    pub fn output_weight(&self) -> ParamId {
        self.output.weight
    }

    pub fn norms(&self) -> impl Iterator<Item = &NormParams> {
        self.norms.iter().flatten()
    }

    /// Dispatches to the residual or plain forward pass (and to the
    /// pre-activated variant) according to the configuration.
    pub fn forward<'g>(
        &mut self,
        tape: &mut Tape<'g>,
        x: Var,
        adj: &'g NormalizedAdjacency,
        training: bool,
        rng: &mut Rng,
    ) -> Result<ForwardOutput> {
        match (self.config.architecture, self.config.pre_activated) {
            (Architecture::PlainGcn, _) => self.forward_plain_gcn(tape, x, adj, training, rng),
            (Architecture::GcnRes, false) => self.forward_residual(tape, x, adj, training, rng, false),
            (Architecture::GcnRes, true) => self.forward_residual(tape, x, adj, training, rng, true),
        }
    }

    /// Residual forward pass with the post-activated block order
    /// `conv → Norm → Relu → Dropout`.
    pub fn forward_gcn_res<'g>(
        &mut self,
        tape: &mut Tape<'g>,
        x: Var,
        adj: &'g NormalizedAdjacency,
        training: bool,
        rng: &mut Rng,
    ) -> Result<ForwardOutput> {
        self.forward_residual(tape, x, adj, training, rng, false)
    }

    /// Residual forward pass with the block order `Norm → Relu → Dropout → conv`.
    pub fn forward_pre_activated<'g>(
        &mut self,
        tape: &mut Tape<'g>,
        x: Var,
        adj: &'g NormalizedAdjacency,
        training: bool,
        rng: &mut Rng,
    ) -> Result<ForwardOutput> {
        self.forward_residual(tape, x, adj, training, rng, true)
    }

    fn check_input(&self, tape: &Tape<'_>, x: Var, adj: &NormalizedAdjacency) -> Result<()> {
        let (rows, cols) = tape.shape(x);
        if rows != adj.num_nodes() || cols != self.config.input_dim {
            return Err(Error::Shape {
                op: "forward",
                left: (adj.num_nodes(), self.config.input_dim),
                right: (rows, cols),
            });
        }
        Ok(())
    }

    fn norm_relu_dropout<'g>(
        &mut self,
        tape: &mut Tape<'g>,
        layer: usize,
        h: Var,
        training: bool,
        rng: &mut Rng,
    ) -> Result<Var> {
        let h = match &mut self.norms[layer] {
            Some(norm) => norm.forward(tape, &self.params, h, training)?,
            None => h,
        };
        let h = tape.relu(h)?;
        tape.dropout(h, self.config.dropout, training, rng)
    }

    fn forward_residual<'g>(
        &mut self,
        tape: &mut Tape<'g>,
        x: Var,
        adj: &'g NormalizedAdjacency,
        training: bool,
        rng: &mut Rng,
        pre_activated: bool,
    ) -> Result<ForwardOutput> {
        self.check_input(tape, x, adj)?;
        let x0 = self.input.forward(tape, &self.params, x)?;
        let mut states = vec![x0];
        for k in 0..self.config.layers {
            let prev = states[k];
            let h = if pre_activated {
                let a = self.norm_relu_dropout(tape, k, prev, training, rng)?;
                gcn_conv(tape, &self.params, a, adj, self.convs[k])?
            } else {
                let c = gcn_conv(tape, &self.params, prev, adj, self.convs[k])?;
                self.norm_relu_dropout(tape, k, c, training, rng)?
            };
            let h = self.residual(tape, h, x0, prev)?;
            states.push(h);
        }
        let aggregated = match self.config.aggregation {
            Aggregation::SoftmaxLayer => {
                let w = tape.param(&self.params, self.aggregation);
                layer_aggregate(tape, &states[1..], w)?
            }
            Aggregation::LastLayer => states[self.config.layers],
        };
        let logits = self.output.forward(tape, &self.params, aggregated)?;
        let log_probs = tape.log_softmax_rows(logits)?;
        Ok(ForwardOutput {
            log_probs,
            states,
            aggregated,
        })
    }

    /// `h + α·X0 + β·prev`; zero coefficients add nothing to the tape.
    fn residual(&self, tape: &mut Tape<'_>, h: Var, x0: Var, prev: Var) -> Result<Var> {
        let mut out = h;
        for (learned, fixed, term) in [(self.alpha, self.config.alpha, x0), (self.beta, self.config.beta, prev)] {
            out = match learned {
                Some(id) => {
                    let c = tape.param(&self.params, id);
                    let scaled = tape.scale_by_entry(term, c, 0)?;
                    tape.add(out, scaled)?
                }
                None if fixed != 0.0 => tape.add_scaled(out, term, fixed)?,
                None => out,
            };
        }
        Ok(out)
    }

    /// Stacked `conv → Relu → Dropout` layers between the input and output
    /// projections, without residual terms or layer aggregation. A norm set
    /// in the configuration is applied after each conv.
    pub fn forward_plain_gcn<'g>(
        &mut self,
        tape: &mut Tape<'g>,
        x: Var,
        adj: &'g NormalizedAdjacency,
        training: bool,
        rng: &mut Rng,
    ) -> Result<ForwardOutput> {
        self.check_input(tape, x, adj)?;
        let x0 = self.input.forward(tape, &self.params, x)?;
        let mut states = vec![x0];
        for k in 0..self.config.layers {
            let c = gcn_conv(tape, &self.params, states[k], adj, self.convs[k])?;
            let h = self.norm_relu_dropout(tape, k, c, training, rng)?;
            states.push(h);
        }
        let aggregated = states[self.config.layers];
        let logits = self.output.forward(tape, &self.params, aggregated)?;
        let log_probs = tape.log_softmax_rows(logits)?;
        Ok(ForwardOutput {
            log_probs,
            states,
            aggregated,
        })
    }

    /// Inference-mode class probabilities for every node.
    pub fn predict(&mut self, x: &Tensor, adj: &NormalizedAdjacency) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        // inference never draws from the stream
        let mut rng = rng::seeded(0);
        let out = self.forward(&mut tape, xv, adj, false, &mut rng)?;
        Ok(tape.value(out.log_probs).map(f64::exp))
    }

    /// Parameters followed by running normalization statistics, in a fixed
    /// order.
    pub fn to_records(&self) -> Records {
        let mut out: Records = self
            .params
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        for (k, norm) in self.norms.iter().enumerate() {
            if let Some(n) = norm {
                let d = n.state.running_mean.len();
                out.push((
                    format!("norm.{k}.running_mean"),
                    Tensor::from_vec(1, d, n.state.running_mean.clone()).expect("length matches"),
                ));
                out.push((
                    format!("norm.{k}.running_var"),
                    Tensor::from_vec(1, d, n.state.running_var.clone()).expect("length matches"),
                ));
            }
        }
        out
    }

    /// Restores values written by [`Self::to_records`] into a model built
    /// with the same configuration.
    pub fn load_records(&mut self, records: &[(String, Tensor)]) -> Result<()> {
        let expected = self.to_records();
        if expected.len() != records.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} records, model expects {}",
                records.len(),
                expected.len()
            )));
        }
        for ((name, t), (ename, et)) in records.iter().zip(&expected) {
            if name != ename || t.shape() != et.shape() {
                return Err(Error::Format(format!(
                    "checkpoint record {name} {:?} does not match {ename} {:?}",
                    t.shape(),
                    et.shape()
                )));
            }
        }
        let ids: Vec<ParamId> = self.params.ids().collect();
        for (id, (_, t)) in ids.iter().zip(records) {
            self.params.get_mut(*id).value = t.clone();
        }
        let mut rest = records[ids.len()..].iter();
        for n in self.norms.iter_mut().flatten() {
            n.state.running_mean = rest.next().expect("counted").1.data().to_vec();
            n.state.running_var = rest.next().expect("counted").1.data().to_vec();
        }
        Ok(())
    }
}

/// `Â · (x · W)`, no bias.
pub fn gcn_conv<'g>(
    tape: &mut Tape<'g>,
    store: &ParamStore,
    x: Var,
    adj: &'g NormalizedAdjacency,
    weight: ParamId,
) -> Result<Var> {
    let w = tape.param(store, weight);
    let h = tape.matmul(x, w)?;
    tape.spmm(adj, h)
}

/// `Σ_k softmax(w)_k ⊙ X(k)`, softmax taken across the layer axis (rows of
/// `weights`). `weights` is `K × 1` or `K × hidden`.
pub fn layer_aggregate(tape: &mut Tape<'_>, states: &[Var], weights: Var) -> Result<Var> {
    let (k, _) = tape.shape(weights);
    if states.is_empty() || states.len() != k {
        return Err(Error::Invalid(format!(
            "{} layer states for {k} aggregation weights",
            states.len()
        )));
    }
    let probs = tape.softmax(weights, Axis::Cols)?;
    let mut total = tape.scale_by_entry(states[0], probs, 0)?;
    for (layer, &s) in states.iter().enumerate().skip(1) {
        let term = tape.scale_by_entry(s, probs, layer)?;
        total = tape.add(total, term)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{symmetric_normalize, CsrGraph};

    fn ring(n: usize) -> NormalizedAdjacency {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        symmetric_normalize(&CsrGraph::from_undirected_edges(n, &edges).unwrap()).unwrap()
    }

    fn features(n: usize, d: usize) -> Tensor {
        Tensor::from_fn(n, d, |i, j| ((i * 31 + j * 17) % 13) as f64 / 13.0 - 0.4)
    }

    #[test]
    fn config_validation() {
        let mut c = GcnResConfig::gcn_res(4, 2, 0);
        assert!(GcnResModel::new(c.clone(), 0).is_err());
        c.layers = 2;
        c.dropout = 1.0;
        assert!(GcnResModel::new(c, 0).is_err());
    }

    #[test]
    fn aggregation_single_layer_is_identity() {
        let mut tape = Tape::new();
        let a = tape.constant(features(5, 3));
        let w = tape.constant(Tensor::filled(1, 1, 17.0));
        let z = layer_aggregate(&mut tape, &[a], w).unwrap();
        assert_eq!(tape.value(z), &features(5, 3));
    }

    #[test]
    fn aggregation_weights_ln3_ln1() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::filled(2, 2, 4.0));
        let b = tape.constant(Tensor::filled(2, 2, 8.0));
        let w = tape.constant(Tensor::from_vec(2, 1, vec![3f64.ln(), 0.0]).unwrap());
        let z = layer_aggregate(&mut tape, &[a, b], w).unwrap();
        for &v in tape.value(z).data() {
            assert!((v - (0.75 * 4.0 + 0.25 * 8.0)).abs() < 1e-12);
        }
        let w2 = tape.constant(Tensor::from_vec(2, 1, vec![0.0, 3f64.ln()]).unwrap());
        let z2 = layer_aggregate(&mut tape, &[b, a], w2).unwrap();
        assert!(tape.value(z).zip_map(tape.value(z2), |p, q| (p - q).abs()).max_abs() < 1e-12);
        assert!(layer_aggregate(&mut tape, &[a], w).is_err());
    }

    #[test]
    fn fresh_aggregation_is_layer_mean() {
        let n = 6;
        let adj = ring(n);
        let mut cfg = GcnResConfig::gcn_res(3, 2, 3);
        cfg.hidden_dim = 4;
        cfg.dropout = 0.0;
        let mut model = GcnResModel::new(cfg, 1).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(features(n, 3));
        let out = model.forward(&mut tape, x, &adj, false, &mut rng::seeded(0)).unwrap();
        let mut mean = Tensor::zeros(n, 4);
        for &s in &out.states[1..] {
            mean.add_assign_scaled(tape.value(s), 1.0 / 3.0);
        }
        let diff = mean.zip_map(tape.value(out.aggregated), |a, b| a - b).max_abs();
        assert!(diff < 1e-12);
    }

    #[test]
    fn conv_with_self_loops_and_identity_weight() {
        let adj = symmetric_normalize(&CsrGraph::from_undirected_edges(4, &[]).unwrap()).unwrap();
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::identity(3));
        let mut tape = Tape::new();
        let x = tape.constant(features(4, 3));
        let y = gcn_conv(&mut tape, &store, x, &adj, w).unwrap();
        assert_eq!(tape.value(y), &features(4, 3));
    }

    #[test]
    fn conv_keeps_constants_on_regular_graphs() {
        let adj = ring(7);
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::identity(2));
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled(7, 2, 2.5));
        let y = gcn_conv(&mut tape, &store, x, &adj, w).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 2.5).abs() < 1e-14);
        }
    }

    #[test]
    fn output_shape_and_probabilities() {
        let n = 9;
        let adj = ring(n);
        for pre in [false, true] {
            for arch in [Architecture::GcnRes, Architecture::PlainGcn] {
                let mut cfg = GcnResConfig::gcn_res(5, 3, 2);
                cfg.hidden_dim = 6;
                cfg.pre_activated = pre;
                cfg.architecture = arch;
                let mut model = GcnResModel::new(cfg, 3).unwrap();
                let probs = model.predict(&features(n, 5), &adj).unwrap();
                assert_eq!(probs.shape(), (n, 3));
                for i in 0..n {
                    assert!((probs.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let adj = ring(5);
        let mut model = GcnResModel::new(GcnResConfig::gcn_res(3, 2, 1), 0).unwrap();
        assert!(model.predict(&features(5, 4), &adj).is_err());
        assert!(model.predict(&features(4, 3), &adj).is_err());
    }

    #[test]
    fn records_round_trip_through_a_fresh_model() {
        let adj = ring(5);
        let cfg = GcnResConfig::gcn_res(3, 2, 2);
        let mut a = GcnResModel::new(cfg.clone(), 1).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(features(5, 3));
        a.forward(&mut tape, x, &adj, true, &mut rng::seeded(2)).unwrap();
        let mut b = GcnResModel::new(cfg, 99).unwrap();
        b.load_records(&a.to_records()).unwrap();
        assert_eq!(a.to_records(), b.to_records());
        assert_eq!(a.predict(&features(5, 3), &adj).unwrap(), b.predict(&features(5, 3), &adj).unwrap());
    }
}
