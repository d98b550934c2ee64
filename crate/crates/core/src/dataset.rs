//! Node-classification datasets and the `NDGG1` binary container.
//!
//! Layout (little-endian, no padding):
//!
//! ```text
//! "NDGG1" | u32 header_len | header JSON {name, n, m, f, c, flags}
//! indptr   (n+1) x u64
//! indices  2m    x u32
//! features n*f   x f32 (row-major)
//! labels   n     x i32 (-1 = unlabeled)
//! train, val, test masks, each n x u8 (0/1)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"NDGG1";

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic: expected \"NDGG1\"")]
    BadMagic,
    #[error("container truncated in section `{section}`")]
    Truncated { section: &'static str },
    #[error("{0} unexpected trailing bytes after the last section")]
    TrailingBytes(usize),
    #[error("invalid header: {0}")]
    Header(String),
    #[error("dataset invariant violated: {0}")]
    Invariant(String),
}

/// Disjoint train/validation/test node sets, each sorted ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitMasks {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitMasks {
    pub fn new(mut train: Vec<usize>, mut val: Vec<usize>, mut test: Vec<usize>) -> Self {
        for ids in [&mut train, &mut val, &mut test] {
            ids.sort_unstable();
            ids.dedup();
        }
        Self { train, val, test }
    }

    fn check(&self, n: usize) -> Result<(), String> {
        let mut owner = vec![None; n];
        for (name, ids) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for &i in ids {
                if i >= n {
                    return Err(format!("{name} mask node {i} out of range"));
                }
                if let Some(other) = owner[i] {
                    return Err(format!("node {i} is in both {other} and {name} masks"));
                }
                owner[i] = Some(name);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    graph: Graph,
    features: Tensor,
    labels: Vec<Option<usize>>,
    masks: SplitMasks,
    num_classes: usize,
    flags: BTreeMap<String, serde_json::Value>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        graph: Graph,
        features: Tensor,
        labels: Vec<Option<usize>>,
        masks: SplitMasks,
        num_classes: usize,
    ) -> Result<Self> {
        let d = Self {
            name: name.into(),
            graph,
            features,
            labels,
            masks,
            num_classes,
            flags: BTreeMap::new(),
        };
        d.check().map_err(ContainerError::Invariant)?;
        Ok(d)
    }

    pub fn with_flag(mut self, key: impl Into<String>, value: serde_json::Value) -> Self {
        self.flags.insert(key.into(), value);
        self
    }

    fn check(&self) -> Result<(), String> {
        let n = self.graph.num_nodes();
        if self.features.rows() != n {
            return Err(format!("{} feature rows for {n} nodes", self.features.rows()));
        }
        if self.labels.len() != n {
            return Err(format!("{} labels for {n} nodes", self.labels.len()));
        }
        if self.num_classes == 0 {
            return Err("class count must be positive".into());
        }
        if let Some(bad) = self.features.data().iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(format!("features must be finite and nonnegative, found {bad}"));
        }
        if let Some(l) = self.labels.iter().flatten().find(|&&l| l >= self.num_classes) {
            return Err(format!("label {l} outside [0, {})", self.num_classes));
        }
        self.masks.check(n)?;
        for &i in self
            .masks
            .train
            .iter()
            .chain(&self.masks.val)
            .chain(&self.masks.test)
        {
            if self.labels[i].is_none() {
                return Err(format!("mask node {i} has no label"));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn masks(&self) -> &SplitMasks {
        &self.masks
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn flags(&self) -> &BTreeMap<String, serde_json::Value> {
        &self.flags
    }

    /// Relabels node `i` as `perm[i]`, carrying features, labels and masks along.
    pub fn permute(&self, perm: &[usize]) -> Result<Dataset> {
        let n = self.num_nodes();
        let mut inverse = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let f = self.num_features();
        let features = Tensor::from_fn(n, f, |i, j| self.features.get(inverse[i], j));
        let labels = (0..n).map(|i| self.labels[inverse[i]]).collect();
        let map = |ids: &[usize]| ids.iter().map(|&i| perm[i]).collect::<Vec<_>>();
        let masks = SplitMasks::new(
            map(&self.masks.train),
            map(&self.masks.val),
            map(&self.masks.test),
        );
        let mut out = Dataset::new(
            self.name.clone(),
            self.graph.permute(perm)?,
            features,
            labels,
            masks,
            self.num_classes,
        )?;
        out.flags = self.flags.clone();
        Ok(out)
    }
}

/// `x_i ← x_i / max(1, Σ_j x_ij)`.
pub fn row_normalized(features: &Tensor) -> Tensor {
    let mut out = features.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let scale = row.iter().sum::<f64>().max(1.0);
        for v in row.iter_mut() {
            *v /= scale;
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    name: String,
    n: u64,
    m: u64,
    f: u64,
    c: u64,
    #[serde(default)]
    flags: BTreeMap<String, serde_json::Value>,
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: Option<usize>, section: &'static str) -> Result<&'a [u8], ContainerError> {
        match len {
            Some(len) if len <= self.bytes.len() => {
                let (head, tail) = self.bytes.split_at(len);
                self.bytes = tail;
                Ok(head)
            }
            _ => Err(ContainerError::Truncated { section }),
        }
    }

    fn section<const W: usize>(
        &mut self,
        count: Option<usize>,
        section: &'static str,
    ) -> Result<impl Iterator<Item = [u8; W]> + 'a, ContainerError> {
        let raw = self.take(count.and_then(|c| c.checked_mul(W)), section)?;
        Ok(raw
            .chunks_exact(W)
            .map(|c| c.try_into().expect("chunk width")))
    }
}

/// Parses a container held in memory.
pub fn decode(bytes: &[u8]) -> Result<Dataset, ContainerError> {
    let mut r = Reader { bytes };
    if r.take(Some(MAGIC.len()), "magic").map_err(|_| ContainerError::BadMagic)? != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let len_bytes = r.take(Some(4), "header length")?;
    let header_len = u32::from_le_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
    let header_bytes = r.take(Some(header_len), "header")?;
    let header: Header =
        serde_json::from_slice(header_bytes).map_err(|e| ContainerError::Header(e.to_string()))?;

    let to_usize = |v: u64, what: &str| {
        usize::try_from(v).map_err(|_| ContainerError::Header(format!("{what} too large")))
    };
    let n = to_usize(header.n, "n")?;
    let m = to_usize(header.m, "m")?;
    let f = to_usize(header.f, "f")?;
    let c = to_usize(header.c, "c")?;
    if n == 0 {
        return Err(ContainerError::Header("n must be positive".into()));
    }
    if c == 0 || c > i32::MAX as usize {
        return Err(ContainerError::Header("c must be in [1, i32::MAX]".into()));
    }
    if n > u32::MAX as usize {
        return Err(ContainerError::Header("n exceeds u32 node ids".into()));
    }

    let nnz = m.checked_mul(2);
    let indptr: Vec<u64> = r
        .section::<8>(n.checked_add(1), "indptr")?
        .map(u64::from_le_bytes)
        .collect();
    let indices: Vec<usize> = r
        .section::<4>(nnz, "indices")?
        .map(|b| u32::from_le_bytes(b) as usize)
        .collect();
    let features: Vec<f64> = r
        .section::<4>(n.checked_mul(f), "features")?
        .map(|b| f64::from(f32::from_le_bytes(b)))
        .collect();
    let raw_labels: Vec<i32> = r.section::<4>(Some(n), "labels")?.map(i32::from_le_bytes).collect();
    let mut masks = Vec::with_capacity(3);
    for section in ["train mask", "val mask", "test mask"] {
        let raw = r.take(Some(n), section)?;
        let mut ids = Vec::new();
        for (i, &b) in raw.iter().enumerate() {
            match b {
                0 => {}
                1 => ids.push(i),
                other => {
                    return Err(ContainerError::Invariant(format!(
                        "{section} byte {other} at node {i} is not 0/1"
                    )))
                }
            }
        }
        masks.push(ids);
    }
    if !r.bytes.is_empty() {
        return Err(ContainerError::TrailingBytes(r.bytes.len()));
    }

    let invariant = |e: Error| ContainerError::Invariant(e.to_string());
    let indptr = indptr
        .into_iter()
        .map(|v| usize::try_from(v).map_err(|_| ContainerError::Invariant("indptr overflow".into())))
        .collect::<Result<Vec<_>, _>>()?;
    let graph = Graph::from_csr(n, indptr, indices).map_err(invariant)?;
    let labels = raw_labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| match l {
            -1 => Ok(None),
            l if l >= 0 => Ok(Some(l as usize)),
            l => Err(ContainerError::Invariant(format!("label {l} at node {i}"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let test = masks.pop().expect("three masks");
    let val = masks.pop().expect("three masks");
    let train = masks.pop().expect("three masks");
    let features = Tensor::new(n, f, features).map_err(invariant)?;
    let mut d = Dataset::new(
        header.name,
        graph,
        features,
        labels,
        SplitMasks { train, val, test },
        c,
    )
    .map_err(|e| match e {
        Error::Container(c) => c,
        other => invariant(other),
    })?;
    d.flags = header.flags;
    Ok(d)
}

/// Serialises a dataset. Features are narrowed to `f32`.
pub fn encode(d: &Dataset) -> Vec<u8> {
    let n = d.num_nodes();
    let header = Header {
        name: d.name.clone(),
        n: n as u64,
        m: d.graph.num_edges() as u64,
        f: d.num_features() as u64,
        c: d.num_classes as u64,
        flags: d.flags.clone(),
    };
    let header = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::with_capacity(
        MAGIC.len() + 4 + header.len() + 8 * (n + 1) + 4 * d.graph.indices().len()
            + 4 * d.features.data().len()
            + 7 * n,
    );
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for &p in d.graph.indptr() {
        out.extend_from_slice(&(p as u64).to_le_bytes());
    }
    for &j in d.graph.indices() {
        out.extend_from_slice(&(j as u32).to_le_bytes());
    }
    for &v in d.features.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for l in &d.labels {
        let raw = l.map_or(-1, |l| l as i32);
        out.extend_from_slice(&raw.to_le_bytes());
    }
    for ids in [&d.masks.train, &d.masks.val, &d.masks.test] {
        let mut mask = vec![0u8; n];
        for &i in ids {
            mask[i] = 1;
        }
        out.extend_from_slice(&mask);
    }
    out
}

pub fn load_container(path: impl AsRef<Path>) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    Ok(decode(&bytes)?)
}

pub fn save_container(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(d))?;
    Ok(())
}

/// Published statistics for a benchmark dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceStats {
    pub name: String,
    pub nodes: usize,
    pub edges: usize,
    pub features: usize,
    pub classes: usize,
}

impl ReferenceStats {
    /// Node/edge/feature/class counts as commonly published for the
    /// Planetoid citation graphs.
    pub fn planetoid(name: &str) -> Option<Self> {
        let (nodes, edges, features, classes) = match name {
            "cora" => (2708, 5429, 1433, 7),
            "citeseer" => (3327, 4732, 3707, 6),
            "pubmed" => (19717, 44338, 500, 3),
            _ => return None,
        };
        Some(Self {
            name: name.to_string(),
            nodes,
            edges,
            features,
            classes,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Differs, but only by counting convention.
    Variant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub field: String,
    pub expected: usize,
    pub measured: usize,
    pub status: CheckStatus,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub dataset: String,
    pub entries: Vec<CheckEntry>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.status != CheckStatus::Fail)
    }

    pub fn entry(&self, field: &str) -> Option<&CheckEntry> {
        self.entries.iter().find(|e| e.field == field)
    }
}

/// Compares measured counts against `expected`. Edge counts that differ are
/// reported as [`CheckStatus::Variant`]; the published numbers do not say
/// whether they count directed, duplicated or self-loop entries.
pub fn validate_dataset(d: &Dataset, expected: &ReferenceStats) -> ValidationReport {
    let exact = |field: &str, expected: usize, measured: usize| CheckEntry {
        field: field.to_string(),
        expected,
        measured,
        status: if expected == measured {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
    };
    let edges = d.graph.num_edges();
    let entries = vec![
        exact("nodes", expected.nodes, d.num_nodes()),
        exact("features", expected.features, d.num_features()),
        exact("classes", expected.classes, d.num_classes),
        CheckEntry {
            field: "edges".into(),
            expected: expected.edges,
            measured: edges,
            status: if edges == expected.edges {
                CheckStatus::Pass
            } else {
                CheckStatus::Variant
            },
        },
    ];
    ValidationReport {
        dataset: d.name.clone(),
        entries,
    }
}
