//! Layers and model assembly.
//!
//! All kinds share one propagation primitive, `relu(Â H W)`. The gated
//! residual layer blends that candidate with the layer input using a
//! per-node, per-channel coefficient computed from a degree embedding and
//! the layer's hidden states:
//!
//! ```text
//! H_cand = relu(Â H_{k-1} W_k)
//! α_k    = logistic(G_k [E(deg) ‖ H_0 ‖ H_cand ‖ H_{k-1}] + b_k)
//! H_k    = (1 - α_k) ⊙ H_cand + α_k ⊙ H_{k-1}
//! ```

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{dropout_sparse, finite_diff_check, NodeId, Tape};
use crate::dataset::{row_normalized, Dataset};
use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, SparseMatrix};
use crate::rng::SplitRng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Gcn,
    Sgc,
    Ndggnet,
    /// Gate removed; both blend coefficients fixed to 1.
    NdggnetStar,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [Self::Gcn, Self::Sgc, Self::Ndggnet, Self::NdggnetStar];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Gcn => "gcn",
            Self::Sgc => "sgc",
            Self::Ndggnet => "ndggnet",
            Self::NdggnetStar => "ndggnet-star",
        }
    }

    pub fn default_layers(self) -> usize {
        match self {
            Self::Gcn | Self::Sgc => 2,
            Self::Ndggnet | Self::NdggnetStar => 8,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown model `{s}` (gcn, sgc, ndggnet, ndggnet-star)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Propagation steps (`k_max`).
    pub layers: usize,
    pub hidden: usize,
    pub degree_dim: usize,
    /// Degrees above the cap share the cap's embedding row.
    pub degree_cap: usize,
    pub dropout: f64,
    pub row_normalize: bool,
    /// Feed raw features instead of `H_0` into the gate.
    pub gate_uses_raw_x: bool,
    pub gate_hidden_layers: usize,
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            layers: kind.default_layers(),
            hidden: 64,
            degree_dim: 16,
            degree_cap: 32,
            dropout: 0.5,
            row_normalize: true,
            gate_uses_raw_x: false,
            gate_hidden_layers: 0,
        }
    }

    pub fn with_layers(mut self, layers: usize) -> Self {
        self.layers = layers;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.layers == 0 {
            return bad("layers must be >= 1");
        }
        if self.hidden == 0 {
            return bad("hidden width must be >= 1");
        }
        if self.degree_dim == 0 {
            return bad("degree embedding dimension must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    fn gated(&self) -> bool {
        self.kind == ModelKind::Ndggnet
    }
}

/// Per-dataset constants shared by every forward pass.
pub struct GraphInputs {
    adj: Arc<SparseMatrix>,
    features: Arc<SparseMatrix>,
    dense_features: Option<Tensor>,
    propagated: Option<Tensor>,
    degree_rows: Vec<usize>,
    num_classes: usize,
}

impl GraphInputs {
    pub fn new(dataset: &Dataset, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let adj = normalize_adjacency(dataset.graph());
        let x = if cfg.row_normalize {
            row_normalized(dataset.features())
        } else {
            dataset.features().clone()
        };
        let propagated = if cfg.kind == ModelKind::Sgc {
            let mut p = x.clone();
            for _ in 0..cfg.layers {
                p = adj.mul_dense(&p)?;
            }
            Some(p)
        } else {
            None
        };
        let degrees = dataset.graph().degrees();
        Ok(Self {
            adj: Arc::new(adj),
            features: Arc::new(SparseMatrix::from_dense(&x)),
            dense_features: (cfg.gated() && cfg.gate_uses_raw_x).then_some(x),
            propagated,
            degree_rows: degrees.as_slice().iter().map(|&d| d.min(cfg.degree_cap)).collect(),
            num_classes: dataset.num_classes(),
        })
    }

    pub fn adjacency(&self) -> &Arc<SparseMatrix> {
        &self.adj
    }

    pub fn num_nodes(&self) -> usize {
        self.adj.rows()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateParams {
    pub hidden: Vec<(Tensor, Tensor)>,
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub gate: Option<GateParams>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// `W_0`, features to hidden. Absent for SGC.
    pub input: Option<Tensor>,
    pub embedding: Option<Tensor>,
    pub layers: Vec<LayerParams>,
    pub output: Tensor,
}

fn glorot(rows: usize, cols: usize, rng: &mut SplitRng) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| rng.uniform(-limit, limit))
}

/// Initial gate bias; positive values start layers close to identity.
pub const GATE_BIAS_INIT: f64 = 1.0;

impl ModelParams {
    pub fn init(cfg: &ModelConfig, num_features: usize, num_classes: usize, rng: &mut SplitRng) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden;
        if cfg.kind == ModelKind::Sgc {
            return Ok(Self {
                input: None,
                embedding: None,
                layers: Vec::new(),
                output: glorot(num_features, num_classes, rng),
            });
        }
        let input = glorot(num_features, h, rng);
        let embedding = cfg
            .gated()
            .then(|| glorot(cfg.degree_cap + 1, cfg.degree_dim, rng));
        let anchor = if cfg.gate_uses_raw_x { num_features } else { h };
        let gate_in = cfg.degree_dim + anchor + 2 * h;
        let layers = (1..cfg.layers)
            .map(|_| {
                let weight = glorot(h, h, rng);
                let gate = cfg.gated().then(|| {
                    let mut width = gate_in;
                    let hidden = (0..cfg.gate_hidden_layers)
                        .map(|_| {
                            let w = glorot(width, h, rng);
                            width = h;
                            (w, Tensor::zeros(1, h))
                        })
                        .collect();
                    GateParams {
                        hidden,
                        weight: glorot(width, h, rng),
                        bias: Tensor::filled(1, h, GATE_BIAS_INIT),
                    }
                });
                LayerParams { weight, gate }
            })
            .collect();
        Ok(Self {
            input: Some(input),
            embedding,
            layers,
            output: glorot(h, num_classes, rng),
        })
    }

    /// Every tensor in canonical order: input, embedding, per layer
    /// (weight, gate hidden pairs, gate weight, gate bias), output.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.input.iter().chain(&self.embedding).collect();
        for layer in &self.layers {
            out.push(&layer.weight);
            if let Some(g) = &layer.gate {
                for (w, b) in &g.hidden {
                    out.push(w);
                    out.push(b);
                }
                out.push(&g.weight);
                out.push(&g.bias);
            }
        }
        out.push(&self.output);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.input.iter_mut().chain(&mut self.embedding).collect();
        for layer in &mut self.layers {
            out.push(&mut layer.weight);
            if let Some(g) = &mut layer.gate {
                for (w, b) in &mut g.hidden {
                    out.push(w);
                    out.push(b);
                }
                out.push(&mut g.weight);
                out.push(&mut g.bias);
            }
        }
        out.push(&mut self.output);
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.data().len()).sum()
    }

    fn check(&self, cfg: &ModelConfig, inputs: &GraphInputs) -> Result<()> {
        let mismatch = |what: &str| Err(Error::Config(format!("parameters do not match config: {what}")));
        let hidden_layers = if cfg.kind == ModelKind::Sgc { 0 } else { cfg.layers - 1 };
        if self.layers.len() != hidden_layers {
            return mismatch("layer count");
        }
        if self.input.is_some() == (cfg.kind == ModelKind::Sgc) {
            return mismatch("input projection");
        }
        if self.embedding.is_some() != cfg.gated()
            || self.layers.iter().any(|l| l.gate.is_some() != cfg.gated())
        {
            return mismatch("gate parameters");
        }
        if let Some(e) = &self.embedding {
            if e.rows() != cfg.degree_cap + 1 {
                return mismatch("degree embedding rows");
            }
        }
        if self.output.cols() != inputs.num_classes {
            return mismatch("class count");
        }
        Ok(())
    }
}

/// How the residual blend coefficient is obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GateMode {
    Learned,
    /// Every entry of `α` forced to this value.
    Fixed(f64),
}

#[derive(Clone, Debug)]
pub struct GateNodes {
    pub hidden: Vec<(NodeId, NodeId)>,
    pub weight: NodeId,
    pub bias: NodeId,
}

#[derive(Clone, Debug)]
pub struct LayerNodes {
    pub weight: NodeId,
    pub gate: Option<GateNodes>,
}

/// Parameter nodes on a tape, mirroring [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ParamNodes {
    pub input: Option<NodeId>,
    pub embedding: Option<NodeId>,
    pub layers: Vec<LayerNodes>,
    pub output: NodeId,
}

impl ParamNodes {
    /// Registers every tensor in canonical order.
    pub fn register(tape: &mut Tape, params: &ModelParams) -> Result<Self> {
        let input = params.input.clone().map(|t| tape.param(t)).transpose()?;
        let embedding = params.embedding.clone().map(|t| tape.param(t)).transpose()?;
        let mut layers = Vec::with_capacity(params.layers.len());
        for layer in &params.layers {
            let weight = tape.param(layer.weight.clone())?;
            let gate = match &layer.gate {
                Some(g) => {
                    let mut hidden = Vec::new();
                    for (w, b) in &g.hidden {
                        hidden.push((tape.param(w.clone())?, tape.param(b.clone())?));
                    }
                    Some(GateNodes {
                        hidden,
                        weight: tape.param(g.weight.clone())?,
                        bias: tape.param(g.bias.clone())?,
                    })
                }
                None => None,
            };
            layers.push(LayerNodes { weight, gate });
        }
        let output = tape.param(params.output.clone())?;
        Ok(Self {
            input,
            embedding,
            layers,
            output,
        })
    }

    /// Rebuilds the structure of `template` from ids listed in canonical
    /// order, as produced by registering `template.tensors()` one by one.
    pub fn from_ids(template: &ModelParams, ids: &[NodeId]) -> Result<Self> {
        if ids.len() != template.tensors().len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter nodes, got {}",
                template.tensors().len(),
                ids.len()
            )));
        }
        let mut it = ids.iter().copied();
        let mut next = || it.next().expect("length checked");
        let input = template.input.as_ref().map(|_| next());
        let embedding = template.embedding.as_ref().map(|_| next());
        let layers = template
            .layers
            .iter()
            .map(|layer| {
                let weight = next();
                let gate = layer.gate.as_ref().map(|g| {
                    let hidden = g.hidden.iter().map(|_| (next(), next())).collect();
                    GateNodes {
                        hidden,
                        weight: next(),
                        bias: next(),
                    }
                });
                LayerNodes { weight, gate }
            })
            .collect();
        Ok(Self {
            input,
            embedding,
            layers,
            output: next(),
        })
    }
}

/// `relu(Â X W_0)` for a constant (possibly dropped-out) sparse `X`.
pub fn input_projection(
    tape: &mut Tape,
    x: Arc<SparseMatrix>,
    adj: &Arc<SparseMatrix>,
    w0: NodeId,
) -> Result<NodeId> {
    let xw = tape.spmm_const(x, w0)?;
    let axw = tape.spmm_const(adj.clone(), xw)?;
    tape.relu(axw)
}

/// `relu(Â H W)`.
pub fn gcn_layer(tape: &mut Tape, h: NodeId, adj: &Arc<SparseMatrix>, w: NodeId) -> Result<NodeId> {
    let hw = tape.matmul(h, w)?;
    let ahw = tape.spmm_const(adj.clone(), hw)?;
    tape.relu(ahw)
}

/// Row `i` is `table[min(deg_i, cap)]`; the caller supplies capped rows.
pub fn degree_embedding(tape: &mut Tape, table: NodeId, degree_rows: &[usize]) -> Result<NodeId> {
    tape.embedding_lookup(table, degree_rows)
}

/// `logistic(affine(concat(inputs)))`, with optional relu hidden layers.
pub fn gate(tape: &mut Tape, params: &GateNodes, inputs: &[NodeId]) -> Result<NodeId> {
    let mut z = tape.concat_cols(inputs)?;
    for &(w, b) in &params.hidden {
        let zw = tape.matmul(z, w)?;
        let zb = tape.add(zw, b)?;
        z = tape.relu(zb)?;
    }
    let zw = tape.matmul(z, params.weight)?;
    let logits = tape.add(zw, params.bias)?;
    tape.logistic(logits)
}

/// `(1 - α) ⊙ candidate + α ⊙ previous`.
pub fn blend(tape: &mut Tape, alpha: NodeId, candidate: NodeId, previous: NodeId) -> Result<NodeId> {
    let keep_new = tape.one_minus(alpha)?;
    let a = tape.hadamard(keep_new, candidate)?;
    let b = tape.hadamard(alpha, previous)?;
    tape.add(a, b)
}

/// Inputs to one gated layer besides the previous hidden state.
pub struct GatedLayerInputs<'a> {
    pub adj: &'a Arc<SparseMatrix>,
    pub degree: NodeId,
    pub anchor: NodeId,
    pub mode: GateMode,
}

/// One gated residual layer. `dropped` is the (possibly dropped-out) layer
/// input that feeds propagation; `previous` is the clean input carried by
/// the residual path and seen by the gate.
pub fn ndgg_layer(
    tape: &mut Tape,
    layer: &LayerNodes,
    dropped: NodeId,
    previous: NodeId,
    ctx: &GatedLayerInputs<'_>,
) -> Result<NodeId> {
    let candidate = gcn_layer(tape, dropped, ctx.adj, layer.weight)?;
    let alpha = match ctx.mode {
        GateMode::Fixed(a) => {
            let (r, c) = tape.shape(candidate);
            tape.constant(Tensor::filled(r, c, a))?
        }
        GateMode::Learned => {
            let params = layer
                .gate
                .as_ref()
                .ok_or_else(|| Error::Config("gated layer without gate parameters".into()))?;
            gate(tape, params, &[ctx.degree, ctx.anchor, candidate, previous])?
        }
    };
    blend(tape, alpha, candidate, previous)
}

#[derive(Clone, Debug)]
pub struct Forward {
    pub logits: NodeId,
    /// Hidden states `H_0 .. H_{k_max - 1}` (empty for SGC).
    pub hidden: Vec<NodeId>,
    pub params: ParamNodes,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn init(config: ModelConfig, inputs: &GraphInputs, rng: &mut SplitRng) -> Result<Self> {
        let params = ModelParams::init(&config, inputs.num_features(), inputs.num_classes(), rng)?;
        Ok(Self { config, params })
    }

    /// Records the forward pass on `tape`. Dropout draws from `rng` only when
    /// `training` is set.
    pub fn forward(
        &self,
        tape: &mut Tape,
        inputs: &GraphInputs,
        training: bool,
        rng: &mut SplitRng,
        mode: GateMode,
    ) -> Result<Forward> {
        self.params.check(&self.config, inputs)?;
        let nodes = ParamNodes::register(tape, &self.params)?;
        self.forward_with(tape, nodes, inputs, training, rng, mode)
    }

    /// Like [`Model::forward`] but with parameter nodes already on the tape.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        nodes: ParamNodes,
        inputs: &GraphInputs,
        training: bool,
        rng: &mut SplitRng,
        mode: GateMode,
    ) -> Result<Forward> {
        let cfg = &self.config;
        self.params.check(cfg, inputs)?;
        let rate = cfg.dropout;
        let adj = &inputs.adj;

        if cfg.kind == ModelKind::Sgc {
            let p = inputs
                .propagated
                .clone()
                .ok_or_else(|| Error::Config("inputs were not prepared for SGC".into()))?;
            let p = tape.constant(p)?;
            let p = tape.dropout(p, rate, rng, training)?;
            let logits = tape.matmul(p, nodes.output)?;
            return Ok(Forward {
                logits,
                hidden: Vec::new(),
                params: nodes,
            });
        }

        let x = if training && rate > 0.0 {
            Arc::new(dropout_sparse(&inputs.features, rate, rng)?)
        } else {
            inputs.features.clone()
        };
        let w0 = nodes.input.expect("checked: non-SGC models have W_0");
        let h0 = input_projection(tape, x, adj, w0)?;
        let mut hidden = vec![h0];
        let mut h = h0;

        let gated = match (cfg.kind, &nodes.embedding) {
            (ModelKind::Ndggnet, Some(table)) => {
                let degree = degree_embedding(tape, *table, &inputs.degree_rows)?;
                let anchor = match &inputs.dense_features {
                    Some(x) => tape.constant(x.clone())?,
                    None => h0,
                };
                Some(GatedLayerInputs {
                    adj,
                    degree,
                    anchor,
                    mode,
                })
            }
            _ => None,
        };

        for layer in &nodes.layers {
            let dropped = tape.dropout(h, rate, rng, training)?;
            h = match cfg.kind {
                ModelKind::Gcn => gcn_layer(tape, dropped, adj, layer.weight)?,
                ModelKind::Ndggnet => {
                    let ctx = gated.as_ref().expect("gated inputs prepared");
                    ndgg_layer(tape, layer, dropped, h, ctx)?
                }
                ModelKind::NdggnetStar => {
                    let candidate = gcn_layer(tape, dropped, adj, layer.weight)?;
                    tape.add(candidate, h)?
                }
                ModelKind::Sgc => unreachable!("handled above"),
            };
            hidden.push(h);
        }

        let h = tape.dropout(h, rate, rng, training)?;
        let logits = tape.matmul(h, nodes.output)?;
        Ok(Forward {
            logits,
            hidden,
            params: nodes,
        })
    }

    /// Evaluation-mode logits.
    pub fn logits(&self, inputs: &GraphInputs) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut rng = SplitRng::new(0);
        let fwd = self.forward(&mut tape, inputs, false, &mut rng, GateMode::Learned)?;
        Ok(tape.value(fwd.logits).clone())
    }

    /// Evaluation-mode hidden states `H_0 ..`.
    pub fn hidden_states(&self, inputs: &GraphInputs) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let mut rng = SplitRng::new(0);
        let fwd = self.forward(&mut tape, inputs, false, &mut rng, GateMode::Learned)?;
        Ok(fwd.hidden.iter().map(|&h| tape.value(h).clone()).collect())
    }

    pub fn predictions(&self, inputs: &GraphInputs) -> Result<Vec<usize>> {
        let logits = self.logits(inputs)?;
        Ok((0..logits.rows()).map(|i| logits.argmax_row(i)).collect())
    }
}

/// Finite-difference check of the full model: evaluation-mode forward,
/// softmax cross-entropy on `mask`, central differences with `step`.
pub fn gradient_check(
    model: &Model,
    inputs: &GraphInputs,
    labels: &[Option<usize>],
    mask: &[usize],
    step: f64,
) -> Result<f64> {
    let params: Vec<Tensor> = model.params.tensors().into_iter().cloned().collect();
    finite_diff_check(
        |tape, ids| {
            let nodes = ParamNodes::from_ids(&model.params, ids)?;
            let mut rng = SplitRng::new(0);
            let fwd = model.forward_with(tape, nodes, inputs, false, &mut rng, GateMode::Learned)?;
            tape.softmax_cross_entropy(fwd.logits, labels, mask)
        },
        &params,
        step,
    )
}

fn with_constants<T>(f: impl FnOnce(&mut Tape) -> Result<NodeId>, g: impl FnOnce(&Tape, NodeId) -> T) -> Result<T> {
    let mut tape = Tape::new();
    let out = f(&mut tape)?;
    Ok(g(&tape, out))
}

/// Tensor-level `relu(Â X W_0)`.
pub fn input_projection_forward(x: &Tensor, adj: &SparseMatrix, w0: &Tensor) -> Result<Tensor> {
    let x = Arc::new(SparseMatrix::from_dense(x));
    let adj = Arc::new(adj.clone());
    with_constants(
        |t| {
            let w = t.constant(w0.clone())?;
            input_projection(t, x, &adj, w)
        },
        |t, id| t.value(id).clone(),
    )
}

/// Tensor-level `relu(Â H W)`.
pub fn gcn_layer_forward(h: &Tensor, adj: &SparseMatrix, w: &Tensor) -> Result<Tensor> {
    let adj = Arc::new(adj.clone());
    with_constants(
        |t| {
            let h = t.constant(h.clone())?;
            let w = t.constant(w.clone())?;
            gcn_layer(t, h, &adj, w)
        },
        |t, id| t.value(id).clone(),
    )
}

/// Tensor-level degree embedding lookup with the cap applied here.
pub fn degree_embedding_forward(table: &Tensor, degrees: &[usize]) -> Result<Tensor> {
    let cap = table.rows().saturating_sub(1);
    let rows: Vec<usize> = degrees.iter().map(|&d| d.min(cap)).collect();
    with_constants(
        |t| {
            let table = t.constant(table.clone())?;
            degree_embedding(t, table, &rows)
        },
        |t, id| t.value(id).clone(),
    )
}

/// Tensor-level gate: `logistic(concat(E, H_0, H_cand, H_prev) W + b)`.
pub fn gate_forward(
    params: &GateParams,
    degree_embedding: &Tensor,
    h0: &Tensor,
    candidate: &Tensor,
    previous: &Tensor,
) -> Result<Tensor> {
    with_constants(
        |t| {
            let mut hidden = Vec::new();
            for (w, b) in &params.hidden {
                hidden.push((t.constant(w.clone())?, t.constant(b.clone())?));
            }
            let nodes = GateNodes {
                hidden,
                weight: t.constant(params.weight.clone())?,
                bias: t.constant(params.bias.clone())?,
            };
            let parts = [
                t.constant(degree_embedding.clone())?,
                t.constant(h0.clone())?,
                t.constant(candidate.clone())?,
                t.constant(previous.clone())?,
            ];
            gate(t, &nodes, &parts)
        },
        |t, id| t.value(id).clone(),
    )
}

/// Tensor-level gated residual layer (no dropout).
pub fn ndgg_layer_forward(
    previous: &Tensor,
    adj: &SparseMatrix,
    layer: &LayerParams,
    degree_embedding: &Tensor,
    h0: &Tensor,
    mode: GateMode,
) -> Result<Tensor> {
    let adj = Arc::new(adj.clone());
    with_constants(
        |t| {
            let prev = t.constant(previous.clone())?;
            let weight = t.constant(layer.weight.clone())?;
            let gate = match &layer.gate {
                Some(g) => {
                    let mut hidden = Vec::new();
                    for (w, b) in &g.hidden {
                        hidden.push((t.constant(w.clone())?, t.constant(b.clone())?));
                    }
                    Some(GateNodes {
                        hidden,
                        weight: t.constant(g.weight.clone())?,
                        bias: t.constant(g.bias.clone())?,
                    })
                }
                None => None,
            };
            let ctx = GatedLayerInputs {
                adj: &adj,
                degree: t.constant(degree_embedding.clone())?,
                anchor: t.constant(h0.clone())?,
                mode,
            };
            ndgg_layer(t, &LayerNodes { weight, gate }, prev, prev, &ctx)
        },
        |t, id| t.value(id).clone(),
    )
}
