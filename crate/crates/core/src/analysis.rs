//! Over-smoothing diagnostics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::{connected_components, normalize_adjacency, Components, Graph, SparseMatrix};
use crate::rng::SplitRng;
use crate::tensor::Tensor;

/// Mean distance of connected nodes: `(1/n) Σ_i Σ_{j ∈ N(i)} ‖x_i - x_j‖²`.
/// Every undirected edge contributes twice.
pub fn mdcn(features: &Tensor, g: &Graph) -> Result<f64> {
    let n = g.num_nodes();
    if features.rows() != n {
        return Err(Error::ShapeMismatch {
            op: "mdcn",
            left: features.shape(),
            right: (n, features.cols()),
        });
    }
    let mut total = 0.0;
    for i in 0..n {
        let xi = features.row(i);
        for &j in g.neighbors(i) {
            total += xi
                .iter()
                .zip(features.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
    }
    Ok(total / n as f64)
}

/// `mdcn(Â^k x)` for `k = 0..=k_max`, propagation only.
pub fn mdcn_vs_depth(g: &Graph, x: &Tensor, k_max: usize) -> Result<Vec<f64>> {
    let adj = normalize_adjacency(g);
    let mut h = x.clone();
    let mut out = Vec::with_capacity(k_max + 1);
    out.push(mdcn(&h, g)?);
    for _ in 0..k_max {
        h = adj.mul_dense(&h)?;
        out.push(mdcn(&h, g)?);
    }
    Ok(out)
}

/// Which eigenvalue counts as "second largest".
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Lambda2Mode {
    /// Largest signed eigenvalue below the trivial ones.
    #[default]
    Signed,
    /// Largest magnitude among the non-trivial eigenvalues.
    Magnitude,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerIterConfig {
    /// Bound on the change of successive Rayleigh quotients.
    pub tolerance: f64,
    /// Bound on `‖M v - ρ v‖`; guards against stalling between close
    /// eigenvalues, where the quotient creeps slowly.
    pub residual_tolerance: f64,
    pub max_iterations: usize,
    pub mode: Lambda2Mode,
}

impl Default for PowerIterConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            residual_tolerance: 1e-8,
            max_iterations: 100_000,
            mode: Lambda2Mode::Signed,
        }
    }
}

/// Eigenvalues closer to zero than this are reported as exactly zero.
pub const ZERO_SNAP: f64 = 1e-12;

/// Second-largest eigenvalue of `Â` for a graph.
pub fn lambda2(g: &Graph) -> Result<f64> {
    lambda2_of(&normalize_adjacency(g), &connected_components(g), &PowerIterConfig::default())
}

/// Second-largest eigenvalue of a normalized adjacency `Â`.
///
/// The top eigenspace is spanned by one `√d̃` vector per component, with
/// `d̃_i = 1 / Â_ii`. Power iteration runs on `Â + I` (or `I - Â` for the
/// bottom of the spectrum) with that space projected out every step.
pub fn lambda2_of(adj: &SparseMatrix, components: &Components, cfg: &PowerIterConfig) -> Result<f64> {
    let n = adj.rows();
    if n != components.labels.len() {
        return Err(Error::ShapeMismatch {
            op: "lambda2",
            left: adj.shape(),
            right: (components.labels.len(), 1),
        });
    }
    if n <= components.count {
        return Ok(0.0);
    }
    let trivial = trivial_eigenvectors(adj, components)?;
    let top = deflated_power(adj, &trivial, 1.0, cfg)? - 1.0;
    let value = match cfg.mode {
        Lambda2Mode::Signed => top,
        Lambda2Mode::Magnitude => {
            let bottom = 1.0 - deflated_power(adj, &trivial, -1.0, cfg)?;
            if bottom.abs() > top.abs() {
                bottom
            } else {
                top
            }
        }
    };
    Ok(if value.abs() < ZERO_SNAP { 0.0 } else { value })
}

/// Unit `√d̃` vector restricted to each component.
fn trivial_eigenvectors(adj: &SparseMatrix, components: &Components) -> Result<Vec<Vec<f64>>> {
    let mut root_d = vec![0.0; adj.rows()];
    for (i, r) in root_d.iter_mut().enumerate() {
        let diag = adj.get(i, i);
        if diag <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "row {i} has no self-loop entry; expected a normalized adjacency"
            )));
        }
        *r = (1.0 / diag).sqrt();
    }
    let mut out = vec![vec![0.0; adj.rows()]; components.count];
    for (i, &c) in components.labels.iter().enumerate() {
        out[c][i] = root_d[i];
    }
    for v in &mut out {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(out)
}

fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
    }
}

/// Dominant eigenvalue of `I + sign·Â` on the complement of `basis`.
fn deflated_power(adj: &SparseMatrix, basis: &[Vec<f64>], sign: f64, cfg: &PowerIterConfig) -> Result<f64> {
    let n = adj.rows();
    let mut rng = SplitRng::new(0x5eed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.uniform(0.5, 1.5)).collect();
    project_out(&mut v, basis);
    let mut norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(1.0);
    }
    v.iter_mut().for_each(|x| *x /= norm);

    let mut w = vec![0.0; n];
    let mut previous = f64::NAN;
    for _ in 0..cfg.max_iterations {
        for (i, wi) in w.iter_mut().enumerate() {
            let av: f64 = adj.row(i).map(|(j, a)| a * v[j]).sum();
            *wi = v[i] + sign * av;
        }
        let rayleigh: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let residual = v
            .iter()
            .zip(&w)
            .map(|(a, b)| (b - rayleigh * a).powi(2))
            .sum::<f64>()
            .sqrt();
        project_out(&mut w, basis);
        norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(rayleigh);
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm;
        }
        if (rayleigh - previous).abs() < cfg.tolerance && residual < cfg.residual_tolerance {
            return Ok(rayleigh);
        }
        previous = rayleigh;
    }
    Err(Error::IterationCap(cfg.max_iterations))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KBoundConfig {
    pub eps: f64,
}

impl Default for KBoundConfig {
    fn default() -> Self {
        Self { eps: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KBound {
    pub eps: f64,
    pub lambda2: f64,
    /// Set when `λ₂ ≤ 0`; every `k` is then 0.
    pub degenerate: bool,
    pub num_nodes: usize,
    pub num_edges: usize,
    pub k: Vec<f64>,
}

/// `K_i = ln(ε √(d̂_i / (2m + n))) / ln λ₂` with `d̂_i = d_i + 1`.
pub fn k_bound(g: &Graph, cfg: &KBoundConfig, lambda2: f64) -> Result<KBound> {
    if !(cfg.eps > 0.0 && cfg.eps < 1.0) {
        return Err(Error::InvalidArgument(format!("eps must lie in (0, 1), got {}", cfg.eps)));
    }
    if !lambda2.is_finite() || lambda2 >= 1.0 {
        return Err(Error::InvalidArgument(format!("lambda2 must be < 1, got {lambda2}")));
    }
    let n = g.num_nodes();
    let m = g.num_edges();
    let degenerate = lambda2 <= 0.0;
    let total = (2 * m + n) as f64;
    let degrees = g.degrees();
    let mut k = Vec::with_capacity(n);
    for i in 0..n {
        if degenerate {
            k.push(0.0);
            continue;
        }
        let arg = cfg.eps * (degrees.with_self_loop(i) as f64 / total).sqrt();
        if arg >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "eps too large: bound argument {arg} >= 1 at node {i}"
            )));
        }
        k.push(arg.ln() / lambda2.ln());
    }
    Ok(KBound {
        eps: cfg.eps,
        lambda2,
        degenerate,
        num_nodes: n,
        num_edges: m,
        k,
    })
}

/// For `k = 0..=k_max`, the largest distance over feature columns between
/// the normalized column of `Â^k x` restricted to `component` and the unit
/// vector proportional to `√d̃` there. Columns that vanish on the component
/// are skipped.
pub fn smoothing_limit_oracle(g: &Graph, x: &Tensor, component: &[usize], k_max: usize) -> Result<Vec<f64>> {
    if x.rows() != g.num_nodes() {
        return Err(Error::ShapeMismatch {
            op: "smoothing_limit_oracle",
            left: x.shape(),
            right: (g.num_nodes(), x.cols()),
        });
    }
    if let Some(&bad) = component.iter().find(|&&i| i >= g.num_nodes()) {
        return Err(Error::NodeOutOfRange { id: bad, n: g.num_nodes() });
    }
    if component.is_empty() {
        return Err(Error::InvalidArgument("empty component".into()));
    }
    let degrees = g.degrees();
    let mut target: Vec<f64> = component
        .iter()
        .map(|&i| (degrees.with_self_loop(i) as f64).sqrt())
        .collect();
    let norm = target.iter().map(|t| t * t).sum::<f64>().sqrt();
    target.iter_mut().for_each(|t| *t /= norm);

    let distance = |h: &Tensor| {
        let mut worst: f64 = 0.0;
        for col in 0..h.cols() {
            let values: Vec<f64> = component.iter().map(|&i| h.get(i, col)).collect();
            let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let d = values
                .iter()
                .zip(&target)
                .map(|(v, t)| (v / norm - t).powi(2))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(d);
        }
        worst
    };

    let adj = normalize_adjacency(g);
    let mut h = x.clone();
    let mut out = Vec::with_capacity(k_max + 1);
    out.push(distance(&h));
    for _ in 0..k_max {
        h = adj.mul_dense(&h)?;
        out.push(distance(&h));
    }
    Ok(out)
}

/// Half-open degree intervals given by ascending lower edges starting at 0;
/// the last interval is unbounded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BucketSpec {
    edges: Vec<usize>,
}

impl Default for BucketSpec {
    fn default() -> Self {
        Self { edges: vec![0, 2, 4, 8] }
    }
}

impl BucketSpec {
    pub fn new(edges: Vec<usize>) -> Result<Self> {
        if edges.first() != Some(&0) {
            return Err(Error::Config("degree buckets must start at 0".into()));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("degree bucket edges must be strictly increasing".into()));
        }
        Ok(Self { edges })
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn bucket_of(&self, degree: usize) -> usize {
        self.edges.partition_point(|&e| e <= degree) - 1
    }

    pub fn bounds(&self, bucket: usize) -> (usize, Option<usize>) {
        (self.edges[bucket], self.edges.get(bucket + 1).copied())
    }

    pub fn label(&self, bucket: usize) -> String {
        match self.bounds(bucket) {
            (lo, Some(hi)) => format!("[{lo},{hi})"),
            (lo, None) => format!("[{lo},inf)"),
        }
    }
}

impl fmt::Display for BucketSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.edges.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for BucketSpec {
    type Err = Error;

    /// Comma-separated lower edges, e.g. `0,2,4,8`.
    fn from_str(s: &str) -> Result<Self> {
        let edges = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad degree bucket edge `{}`", p.trim())))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(edges)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketAccuracy {
    pub bucket: String,
    pub lo: usize,
    pub hi: Option<usize>,
    pub count: usize,
    pub correct: usize,
    /// `None` for an empty bucket.
    pub accuracy: Option<f64>,
}

/// Test-mask accuracy grouped by raw degree.
pub fn degree_bucket_accuracy(logits: &Tensor, dataset: &Dataset, spec: &BucketSpec) -> Result<Vec<BucketAccuracy>> {
    if logits.rows() != dataset.num_nodes() {
        return Err(Error::ShapeMismatch {
            op: "degree_bucket_accuracy",
            left: logits.shape(),
            right: (dataset.num_nodes(), dataset.num_classes()),
        });
    }
    let mut counts = vec![(0usize, 0usize); spec.len()];
    for &i in &dataset.masks().test {
        let b = spec.bucket_of(dataset.graph().degree(i));
        counts[b].0 += 1;
        if dataset.labels()[i] == Some(logits.argmax_row(i)) {
            counts[b].1 += 1;
        }
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(b, (count, correct))| {
            let (lo, hi) = spec.bounds(b);
            BucketAccuracy {
                bucket: spec.label(b),
                lo,
                hi,
                count,
                correct,
                accuracy: (count > 0).then(|| correct as f64 / count as f64),
            }
        })
        .collect())
}

/// `k,value` rows for a curve indexed from 0.
pub fn curve_csv(values: &[f64]) -> String {
    let mut out = String::from("k,value\n");
    for (k, v) in values.iter().enumerate() {
        out.push_str(&format!("{k},{v:e}\n"));
    }
    out
}
