//! Small generated datasets for tests and offline runs.

use crate::dataset::{Dataset, SplitMasks};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::SplitRng;
use crate::tensor::Tensor;

/// Stochastic block model with class-correlated binary bag-of-words features.
#[derive(Clone, Debug)]
pub struct PlantedPartition {
    pub classes: usize,
    pub nodes_per_class: usize,
    pub features: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Probability that a node activates a word from its own class's block.
    pub p_signal: f64,
    /// Probability for any other word.
    pub p_noise: f64,
    pub train_per_class: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for PlantedPartition {
    fn default() -> Self {
        Self {
            classes: 3,
            nodes_per_class: 20,
            features: 12,
            p_in: 0.3,
            p_out: 0.03,
            p_signal: 0.3,
            p_noise: 0.08,
            train_per_class: 4,
            val: 12,
            test: 24,
        }
    }
}

impl PlantedPartition {
    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        let n = self.classes * self.nodes_per_class;
        if self.classes == 0 || self.nodes_per_class == 0 {
            return Err(Error::InvalidArgument("empty planted partition".into()));
        }
        if self.classes * self.train_per_class + self.val + self.test > n {
            return Err(Error::InvalidArgument("split larger than graph".into()));
        }
        let root = SplitRng::new(seed);
        let mut rng = root.split("edges");
        let label = |i: usize| i / self.nodes_per_class;
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                let p = if label(u) == label(v) { self.p_in } else { self.p_out };
                if rng.next_f64() < p {
                    edges.push((u, v));
                }
            }
        }
        let graph = Graph::from_edges(n, &edges)?;

        let mut rng = root.split("features");
        let block = (self.features / self.classes).max(1);
        let features = Tensor::from_fn(n, self.features, |i, j| {
            let own = j / block == label(i);
            let p = if own { self.p_signal } else { self.p_noise };
            f64::from(u8::from(rng.next_f64() < p))
        });

        let mut rng = root.split("split");
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let mut train = Vec::new();
        let mut taken = vec![0; self.classes];
        let mut rest = Vec::new();
        for &i in &order {
            if taken[label(i)] < self.train_per_class {
                taken[label(i)] += 1;
                train.push(i);
            } else {
                rest.push(i);
            }
        }
        let val = rest[..self.val].to_vec();
        let test = rest[self.val..self.val + self.test].to_vec();
        let labels = (0..n).map(|i| Some(label(i))).collect();
        Ok(Dataset::new(
            "planted",
            graph,
            features,
            labels,
            SplitMasks::new(train, val, test),
            self.classes,
        )?
        .with_flag("synthetic", serde_json::json!("planted-partition")))
    }
}

/// Two `k`-cliques joined by a single edge; each node's feature is a one-hot
/// of its clique. Every node is in the test mask except one train node per
/// clique and one validation node per clique.
pub fn two_cliques(k: usize) -> Result<Dataset> {
    if k < 3 {
        return Err(Error::InvalidArgument("cliques need at least 3 nodes".into()));
    }
    let n = 2 * k;
    let mut edges = Vec::new();
    for base in [0, k] {
        for u in base..base + k {
            for v in (u + 1)..base + k {
                edges.push((u, v));
            }
        }
    }
    edges.push((k - 1, k));
    let graph = Graph::from_edges(n, &edges)?;
    let features = Tensor::from_fn(n, 2, |i, j| f64::from(u8::from((i / k) == j)));
    let labels = (0..n).map(|i| Some(i / k)).collect();
    let train = vec![0, k];
    let val = vec![1, k + 1];
    let test = (0..n).filter(|i| !train.contains(i) && !val.contains(i)).collect();
    Dataset::new(
        "two-cliques",
        graph,
        features,
        labels,
        SplitMasks::new(train, val, test),
        2,
    )
}

/// Uniform random graph with `n` nodes and roughly `avg_degree` mean degree.
pub fn random_graph(n: usize, avg_degree: f64, rng: &mut SplitRng) -> Result<Graph> {
    let p = if n > 1 { (avg_degree / (n - 1) as f64).min(1.0) } else { 0.0 };
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.next_f64() < p {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(n, &edges)
}
