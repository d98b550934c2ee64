//! Minimal reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records a fixed set of primitives as they are evaluated.
//! [`Tape::backward`] walks the records in reverse, visiting each node once,
//! and returns gradients for every registered parameter. Sparse operands of
//! [`Tape::spmm_const`] are constants: no gradient flows into them.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::SparseMatrix;
use crate::rng::SplitRng;
use crate::tensor::{gemm, Tensor, Trans};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    SpmmConst(Arc<SparseMatrix>, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    OneMinus(NodeId),
    ConcatCols(Vec<NodeId>),
    Relu(NodeId),
    Logistic(NodeId),
    Hadamard(NodeId, NodeId),
    Dropout(NodeId, Vec<f64>),
    Embedding(NodeId, Vec<usize>),
    SoftmaxXent {
        logits: NodeId,
        probs: Tensor,
        targets: Vec<(usize, usize)>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<NodeId>,
}

/// Gradients indexed by parameter registration order.
#[derive(Clone, Debug)]
pub struct Gradients(Vec<Tensor>);

impl Gradients {
    pub fn get(&self, param_index: usize) -> &Tensor {
        &self.0[param_index]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.0.iter()
    }

    pub fn into_vec(self) -> Vec<Tensor> {
        self.0
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.value(id).shape()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn mismatch(&self, op: &'static str, a: NodeId, b: NodeId) -> Error {
        Error::ShapeMismatch {
            op,
            left: self.shape(a),
            right: self.shape(b),
        }
    }

    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(value, Op::Leaf, false, "constant")
    }

    /// Registers a trainable leaf. Gradients come back in registration order.
    pub fn param(&mut self, value: Tensor) -> Result<NodeId> {
        let id = self.push(value, Op::Leaf, true, "param")?;
        self.params.push(id);
        Ok(id)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = Tensor::zeros(va.rows(), vb.cols());
        gemm(Trans::No, va, Trans::No, vb, &mut out, 0.0);
        let rg = self.needs(&[a, b]);
        self.push(out, Op::MatMul(a, b), rg, "matmul")
    }

    pub fn spmm_const(&mut self, s: Arc<SparseMatrix>, x: NodeId) -> Result<NodeId> {
        let out = s.mul_dense(self.value(x))?;
        let rg = self.needs(&[x]);
        self.push(out, Op::SpmmConst(s, x), rg, "spmm")
    }

    /// Elementwise sum; `b` may also be a single row broadcast over `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let rg = self.needs(&[a, b]);
        if va.shape() == vb.shape() {
            let out = va.zip_map(vb, |x, y| x + y)?;
            self.push(out, Op::Add(a, b), rg, "add")
        } else if vb.rows() == 1 && vb.cols() == va.cols() {
            let mut out = va.clone();
            for i in 0..out.rows() {
                for (o, &bv) in out.row_mut(i).iter_mut().zip(vb.data()) {
                    *o += bv;
                }
            }
            self.push(out, Op::AddRow(a, b), rg, "add")
        } else {
            Err(self.mismatch("add", a, b))
        }
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self
            .value(a)
            .zip_map(self.value(b), |x, y| x - y)
            .map_err(|_| self.mismatch("sub", a, b))?;
        let rg = self.needs(&[a, b]);
        self.push(out, Op::Sub(a, b), rg, "sub")
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.value(a).map(|x| 1.0 - x);
        let rg = self.needs(&[a]);
        self.push(out, Op::OneMinus(a), rg, "one_minus")
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let rows = self.value(first).rows();
        if let Some(&bad) = parts.iter().find(|&&p| self.value(p).rows() != rows) {
            return Err(self.mismatch("concat_cols", first, bad));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for i in 0..rows {
            let mut offset = 0;
            let dst = out.row_mut(i);
            for &p in parts {
                let src = self.nodes[p.0].value.row(i);
                dst[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        let rg = self.needs(parts);
        self.push(out, Op::ConcatCols(parts.to_vec()), rg, "concat_cols")
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.needs(&[a]);
        self.push(out, Op::Relu(a), rg, "relu")
    }

    pub fn logistic(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.value(a).map(logistic);
        let rg = self.needs(&[a]);
        self.push(out, Op::Logistic(a), rg, "logistic")
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self
            .value(a)
            .zip_map(self.value(b), |x, y| x * y)
            .map_err(|_| self.mismatch("hadamard", a, b))?;
        let rg = self.needs(&[a, b]);
        self.push(out, Op::Hadamard(a, b), rg, "hadamard")
    }

    /// Inverted dropout. Identity (the same node) when not training or when
    /// `rate == 0`; otherwise zeroes each entry with probability `rate` and
    /// scales survivors by `1 / (1 - rate)`.
    pub fn dropout(&mut self, a: NodeId, rate: f64, rng: &mut SplitRng, training: bool) -> Result<NodeId> {
        check_rate(rate)?;
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let value = self.value(a);
        let mask: Vec<f64> = (0..value.data().len())
            .map(|_| if rng.next_f64() < rate { 0.0 } else { keep })
            .collect();
        let data = value.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(value.rows(), value.cols(), data)?;
        let rg = self.needs(&[a]);
        self.push(out, Op::Dropout(a, mask), rg, "dropout")
    }

    /// Row `i` of the output is row `ids[i]` of `table`.
    pub fn embedding_lookup(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let t = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::InvalidArgument(format!(
                "embedding id {bad} outside table with {} rows",
                t.rows()
            )));
        }
        let mut out = Tensor::zeros(ids.len(), t.cols());
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).copy_from_slice(t.row(id));
        }
        let rg = self.needs(&[table]);
        self.push(out, Op::Embedding(table, ids.to_vec()), rg, "embedding")
    }

    /// Mean over `mask` of `-log softmax(logits_i)[label_i]`, as a 1x1 node.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        labels: &[Option<usize>],
        mask: &[usize],
    ) -> Result<NodeId> {
        if mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        let z = self.value(logits);
        if labels.len() != z.rows() {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                left: z.shape(),
                right: (labels.len(), 1),
            });
        }
        let c = z.cols();
        let mut probs = Tensor::zeros(mask.len(), c);
        let mut targets = Vec::with_capacity(mask.len());
        let mut total = 0.0;
        for (k, &i) in mask.iter().enumerate() {
            let label = labels
                .get(i)
                .copied()
                .flatten()
                .filter(|&l| l < c)
                .ok_or_else(|| Error::InvalidArgument(format!("node {i} has no valid label")))?;
            let row = z.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            total += lse - row[label];
            for (p, &v) in probs.row_mut(k).iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
            targets.push((i, label));
        }
        let out = Tensor::filled(1, 1, total / mask.len() as f64);
        let rg = self.needs(&[logits]);
        self.push(
            out,
            Op::SoftmaxXent {
                logits,
                probs,
                targets,
            },
            rg,
            "softmax_cross_entropy",
        )
    }

    /// Gradients of the scalar `loss` with respect to every registered
    /// parameter. Parameters the loss does not depend on get zeros.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let (rows, cols) = self.shape(loss);
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarLoss { rows, cols });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if let Op::Leaf = node.op {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(&node.op, &node.value, g, &mut grads)?;
        }

        Ok(Gradients(
            self.params
                .iter()
                .map(|&p| {
                    grads[p.0]
                        .take()
                        .unwrap_or_else(|| Tensor::zeros(self.value(p).rows(), self.value(p).cols()))
                })
                .collect(),
        ))
    }

    fn propagate(
        &self,
        op: &Op,
        out: &Tensor,
        g: Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let needs = |id: NodeId| self.nodes[id.0].requires_grad;
        let mut acc = |id: NodeId, delta: Tensor| match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&delta),
            slot => *slot = Some(delta),
        };
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if needs(*a) {
                    let mut ga = Tensor::zeros(va.rows(), va.cols());
                    gemm(Trans::No, &g, Trans::Yes, vb, &mut ga, 0.0);
                    acc(*a, ga);
                }
                if needs(*b) {
                    let mut gb = Tensor::zeros(vb.rows(), vb.cols());
                    gemm(Trans::Yes, va, Trans::No, &g, &mut gb, 0.0);
                    acc(*b, gb);
                }
            }
            Op::SpmmConst(s, x) => acc(*x, s.transpose_mul_dense(&g)?),
            Op::Add(a, b) => {
                if needs(*b) {
                    acc(*b, g.clone());
                }
                if needs(*a) {
                    acc(*a, g);
                }
            }
            Op::AddRow(a, b) => {
                if needs(*b) {
                    let mut gb = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, &v) in gb.data_mut().iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    acc(*b, gb);
                }
                if needs(*a) {
                    acc(*a, g);
                }
            }
            Op::Sub(a, b) => {
                if needs(*b) {
                    acc(*b, g.map(|v| -v));
                }
                if needs(*a) {
                    acc(*a, g);
                }
            }
            Op::OneMinus(a) => acc(*a, g.map(|v| -v)),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let width = self.value(p).cols();
                    if needs(p) {
                        let part = Tensor::from_fn(g.rows(), width, |i, j| g.get(i, offset + j));
                        acc(p, part);
                    }
                    offset += width;
                }
            }
            Op::Relu(a) => acc(*a, g.zip_map(out, |gv, y| if y > 0.0 { gv } else { 0.0 })?),
            Op::Logistic(a) => acc(*a, g.zip_map(out, |gv, s| gv * s * (1.0 - s))?),
            Op::Hadamard(a, b) => {
                if needs(*a) {
                    acc(*a, g.zip_map(self.value(*b), |gv, y| gv * y)?);
                }
                if needs(*b) {
                    acc(*b, g.zip_map(self.value(*a), |gv, x| gv * x)?);
                }
            }
            Op::Dropout(a, mask) => {
                let data = g.data().iter().zip(mask).map(|(gv, m)| gv * m).collect();
                acc(*a, Tensor::new(g.rows(), g.cols(), data)?);
            }
            Op::Embedding(table, ids) => {
                let t = self.value(*table);
                let mut gt = Tensor::zeros(t.rows(), t.cols());
                for (i, &id) in ids.iter().enumerate() {
                    for (o, &v) in gt.row_mut(id).iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                acc(*table, gt);
            }
            Op::SoftmaxXent {
                logits,
                probs,
                targets,
            } => {
                let scale = g.get(0, 0) / targets.len() as f64;
                let z = self.value(*logits);
                let mut gz = Tensor::zeros(z.rows(), z.cols());
                for (k, &(i, label)) in targets.iter().enumerate() {
                    let row = gz.row_mut(i);
                    for (o, &p) in row.iter_mut().zip(probs.row(k)) {
                        *o += scale * p;
                    }
                    row[label] -= scale;
                }
                acc(*logits, gz);
            }
        }
        Ok(())
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

/// Inverted dropout applied to the stored entries of a constant sparse matrix.
/// Implicit zeros stay zero, so this matches dense dropout on the same matrix.
pub fn dropout_sparse(s: &SparseMatrix, rate: f64, rng: &mut SplitRng) -> Result<SparseMatrix> {
    check_rate(rate)?;
    if rate == 0.0 {
        return Ok(s.clone());
    }
    let keep = 1.0 / (1.0 - rate);
    Ok(s.map_values(|v, _| if rng.next_f64() < rate { 0.0 } else { v * keep }))
}

/// Compares tape gradients with central differences.
///
/// `forward` builds the loss on a fresh tape from parameter nodes registered
/// in the order of `params`. It must be deterministic. Returns the maximum
/// over all parameter entries of `|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)`.
pub fn finite_diff_check<F>(forward: F, params: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let eval = |values: &[Tensor]| -> Result<(Tape, NodeId)> {
        let mut tape = Tape::new();
        let ids = values
            .iter()
            .map(|v| tape.param(v.clone()))
            .collect::<Result<Vec<_>>>()?;
        let loss = forward(&mut tape, &ids)?;
        Ok((tape, loss))
    };
    let (tape, loss) = eval(params)?;
    let analytic = tape.backward(loss)?;

    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    for p in 0..params.len() {
        for k in 0..params[p].data().len() {
            let original = work[p].data()[k];
            work[p].data_mut()[k] = original + step;
            let (t, l) = eval(&work)?;
            let plus = t.value(l).get(0, 0);
            work[p].data_mut()[k] = original - step;
            let (t, l) = eval(&work)?;
            let minus = t.value(l).get(0, 0);
            work[p].data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let exact = analytic.get(p).data()[k];
            let err = (exact - numeric).abs() / (exact.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
