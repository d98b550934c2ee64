//! Undirected graphs in CSR form and the self-loop normalised adjacency
//! `Â = D̃^{-1/2} (A + I) D̃^{-1/2}`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Undirected, unweighted graph. Each edge is stored in both directions;
/// self-loops are never stored (normalisation adds them analytically).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    m: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
}

impl Graph {
    /// Symmetrises, deduplicates and strips self-loops from `edges`.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(u, v) in edges {
            for id in [u, v] {
                if id >= n {
                    return Err(Error::NodeOutOfRange { id, n });
                }
            }
            if u != v {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        indptr.push(0);
        for mut row in adj {
            row.sort_unstable();
            row.dedup();
            indices.extend(row);
            indptr.push(indices.len());
        }
        let m = indices.len() / 2;
        Ok(Self {
            n,
            m,
            indptr,
            indices,
        })
    }

    /// Adopts existing CSR arrays after checking every structural invariant.
    pub fn from_csr(n: usize, indptr: Vec<usize>, indices: Vec<usize>) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        let invalid = |msg: String| Err(Error::InvalidArgument(msg));
        if indptr.len() != n + 1 || indptr[0] != 0 || indptr[n] != indices.len() {
            return invalid("indptr must have n+1 entries from 0 to nnz".into());
        }
        if indices.len() % 2 != 0 {
            return invalid("undirected graph must store an even number of entries".into());
        }
        for i in 0..n {
            if indptr[i] > indptr[i + 1] {
                return invalid(format!("indptr decreases at row {i}"));
            }
            let row = &indices[indptr[i]..indptr[i + 1]];
            for (k, &j) in row.iter().enumerate() {
                if j >= n {
                    return Err(Error::NodeOutOfRange { id: j, n });
                }
                if j == i {
                    return invalid(format!("self-loop stored at node {i}"));
                }
                if k > 0 && row[k - 1] >= j {
                    return invalid(format!("neighbours of node {i} not strictly ascending"));
                }
            }
        }
        let g = Self {
            n,
            m: indices.len() / 2,
            indptr,
            indices,
        };
        for i in 0..n {
            for &j in g.neighbors(i) {
                if g.neighbors(j).binary_search(&i).is_err() {
                    return invalid(format!("edge {i}->{j} has no reverse entry"));
                }
            }
        }
        Ok(g)
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    /// Unique undirected edges, self-loops excluded.
    pub fn num_edges(&self) -> usize {
        self.m
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[self.indptr[i]..self.indptr[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.indptr[i + 1] - self.indptr[i]
    }

    pub fn degrees(&self) -> DegreeVector {
        DegreeVector((0..self.n).map(|i| self.degree(i)).collect())
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| {
            self.neighbors(i)
                .iter()
                .filter(move |&&j| j > i)
                .map(move |&j| (i, j))
        })
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Graph> {
        let edges: Vec<_> = self.edges().map(|(u, v)| (perm[u], perm[v])).collect();
        Graph::from_edges(self.n, &edges)
    }
}

/// Per-node degree without the self-loop.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DegreeVector(Vec<usize>);

impl DegreeVector {
    pub fn raw(&self, i: usize) -> usize {
        self.0[i]
    }

    /// `d̃_i = d_i + 1`.
    pub fn with_self_loop(&self, i: usize) -> usize {
        self.0[i] + 1
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

/// Real-valued CSR matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_csr(
        rows: usize,
        cols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let ok = indptr.len() == rows + 1
            && indptr[0] == 0
            && indptr[rows] == indices.len()
            && indices.len() == values.len()
            && indptr.windows(2).all(|w| w[0] <= w[1])
            && indices.iter().all(|&j| j < cols);
        if !ok {
            return Err(Error::InvalidArgument("malformed CSR structure".into()));
        }
        for i in 0..rows {
            let row = &indices[indptr[i]..indptr[i + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "columns of row {i} not strictly ascending"
                )));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "sparse matrix" });
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Keeps the nonzero entries of `dense`.
    pub fn from_dense(dense: &Tensor) -> Self {
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for i in 0..dense.rows() {
            for (j, &v) in dense.row(i).iter().enumerate() {
                if v != 0.0 {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            rows: dense.rows(),
            cols: dense.cols(),
            indptr,
            indices,
            values,
        }
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                out.set(i, j, v);
            }
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.indptr[i]..self.indptr[i + 1];
        self.indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.indptr[i]..self.indptr[i + 1];
        match self.indices[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    /// Same sparsity pattern, values replaced entry-wise by `f(value, k)`
    /// where `k` is the position in storage order.
    pub fn map_values(&self, mut f: impl FnMut(f64, usize) -> f64) -> SparseMatrix {
        SparseMatrix {
            values: self
                .values
                .iter()
                .enumerate()
                .map(|(k, &v)| f(v, k))
                .collect(),
            ..self.clone()
        }
    }

    /// `self * x`.
    pub fn mul_dense(&self, x: &Tensor) -> Result<Tensor> {
        if self.cols != x.rows() {
            return Err(Error::ShapeMismatch {
                op: "spmm",
                left: self.shape(),
                right: x.shape(),
            });
        }
        let width = x.cols();
        let mut out = Tensor::zeros(self.rows, width);
        for i in 0..self.rows {
            let acc = out.row_mut(i);
            for (j, v) in self.row(i) {
                for (o, &xv) in acc.iter_mut().zip(x.row(j)) {
                    *o += v * xv;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ * y`.
    pub fn transpose_mul_dense(&self, y: &Tensor) -> Result<Tensor> {
        if self.rows != y.rows() {
            return Err(Error::ShapeMismatch {
                op: "spmm_transpose",
                left: (self.cols, self.rows),
                right: y.shape(),
            });
        }
        let mut out = Tensor::zeros(self.cols, y.cols());
        for i in 0..self.rows {
            let yi = y.row(i);
            for (j, v) in self.row(i) {
                for (o, &yv) in out.row_mut(j).iter_mut().zip(yi) {
                    *o += v * yv;
                }
            }
        }
        Ok(out)
    }
}

/// `Â[i][j] = 1/√(d̃_i d̃_j)` for `j ∈ N(i) ∪ {i}`.
pub fn normalize_adjacency(g: &Graph) -> SparseMatrix {
    let n = g.num_nodes();
    let dt: Vec<f64> = (0..n).map(|i| (g.degree(i) + 1) as f64).collect();
    let mut indptr = Vec::with_capacity(n + 1);
    let mut indices = Vec::with_capacity(g.indices().len() + n);
    let mut values = Vec::with_capacity(g.indices().len() + n);
    indptr.push(0);
    for i in 0..n {
        let nbrs = g.neighbors(i);
        let split = nbrs.partition_point(|&j| j < i);
        let ordered = nbrs[..split]
            .iter()
            .chain(std::iter::once(&i))
            .chain(&nbrs[split..]);
        for &j in ordered {
            indices.push(j);
            values.push(1.0 / (dt[i] * dt[j]).sqrt());
        }
        indptr.push(indices.len());
    }
    SparseMatrix {
        rows: n,
        cols: n,
        indptr,
        indices,
        values,
    }
}

/// Sparse-dense product `a * x`.
pub fn spmm(a: &SparseMatrix, x: &Tensor) -> Result<Tensor> {
    a.mul_dense(x)
}

/// Connected-component labelling.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Components {
    pub labels: Vec<usize>,
    pub count: usize,
}

impl Components {
    pub fn members(&self, label: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.count];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Label of the largest component (lowest label on ties).
    pub fn largest(&self) -> usize {
        let sizes = self.sizes();
        let mut best = 0;
        for (l, &s) in sizes.iter().enumerate() {
            if s > sizes[best] {
                best = l;
            }
        }
        best
    }
}

/// Labels are assigned in order of each component's lowest node id.
pub fn connected_components(g: &Graph) -> Components {
    let n = g.num_nodes();
    let mut labels = vec![usize::MAX; n];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..n {
        if labels[start] != usize::MAX {
            continue;
        }
        labels[start] = count;
        stack.push(start);
        while let Some(u) = stack.pop() {
            for &v in g.neighbors(u) {
                if labels[v] == usize::MAX {
                    labels[v] = count;
                    stack.push(v);
                }
            }
        }
        count += 1;
    }
    Components { labels, count }
}
