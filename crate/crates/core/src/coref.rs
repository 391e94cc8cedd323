//! Token-level coreference graph and its symmetric GCN normalization.

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::Span;
use crate::error::{Error, Result};

/// How mentions of one cluster are linked.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    /// Each mention links to its predecessor and successor in the cluster.
    #[default]
    Chain,
    /// Every pair of mentions in the cluster is linked.
    Clique,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorefGraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl CorefGraph {
    pub fn empty(n: usize) -> Self {
        CorefGraph {
            n,
            edges: BTreeSet::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Undirected edges as `(lo, hi)` pairs.
    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    fn connect(&mut self, a: usize, b: usize) {
        if a != b {
            self.edges.insert((a.min(b), a.max(b)));
        }
    }

    pub fn adjacency(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n, self.n));
        for &(i, j) in &self.edges {
            a[[i, j]] = 1.0;
            a[[j, i]] = 1.0;
        }
        a
    }

    pub fn degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == i || b == i).count()
    }
}

pub fn build_coref_graph(clusters: &[Vec<Span>], n: usize) -> Result<CorefGraph> {
    build_coref_graph_with(clusters, n, Topology::Chain)
}

/// Every token of a multi-token mention links to the mention's first token;
/// mentions are then linked through their first tokens per `topology`.
pub fn build_coref_graph_with(clusters: &[Vec<Span>], n: usize, topology: Topology) -> Result<CorefGraph> {
    let mut g = CorefGraph::empty(n);
    for cluster in clusters {
        let mut spans = cluster.clone();
        spans.sort();
        for s in &spans {
            if s.start() >= s.end() || s.end() > n {
                return Err(Error::CorefSpan {
                    start: s.start(),
                    end: s.end(),
                    n,
                    reason: "out of range",
                });
            }
        }
        for w in spans.windows(2) {
            if w[1].start() < w[0].end() {
                return Err(Error::CorefSpan {
                    start: w[1].start(),
                    end: w[1].end(),
                    n,
                    reason: "overlaps another mention of the same cluster",
                });
            }
        }
        for s in &spans {
            for t in s.start() + 1..s.end() {
                g.connect(s.start(), t);
            }
        }
        match topology {
            Topology::Chain => {
                for w in spans.windows(2) {
                    g.connect(w[0].start(), w[1].start());
                }
            }
            Topology::Clique => {
                for (i, a) in spans.iter().enumerate() {
                    for b in &spans[i + 1..] {
                        g.connect(a.start(), b.start());
                    }
                }
            }
        }
    }
    Ok(g)
}

/// `Â = D^{-1/2} (A + I) D^{-1/2}` stored as its non-zero entries, since
/// coreference graphs are very sparse.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    n: usize,
    /// `(row, col, weight)` sorted by row then column.
    entries: Vec<(usize, usize, f64)>,
}

impl NormalizedAdjacency {
    /// Self-loops only, the normalization of an edgeless graph.
    pub fn identity(n: usize) -> Self {
        NormalizedAdjacency {
            n,
            entries: (0..n).map(|i| (i, i, 1.0)).collect(),
        }
    }

    /// Wraps an already-normalized dense matrix.
    pub fn from_dense(m: &Array2<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Shape(format!("adjacency must be square, got {:?}", m.dim())));
        }
        let entries = m
            .indexed_iter()
            .filter(|(_, &v)| v != 0.0)
            .map(|((i, j), &v)| (i, j, v))
            .collect();
        Ok(NormalizedAdjacency { n: m.nrows(), entries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n, self.n));
        for &(i, j, w) in &self.entries {
            a[[i, j]] = w;
        }
        a
    }
}

pub fn normalize_adjacency(graph: &CorefGraph) -> NormalizedAdjacency {
    let n = graph.n;
    let mut degree = vec![1.0f64; n];
    for &(i, j) in &graph.edges {
        degree[i] += 1.0;
        degree[j] += 1.0;
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut entries: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, inv_sqrt[i] * inv_sqrt[i])).collect();
    for &(i, j) in &graph.edges {
        let w = inv_sqrt[i] * inv_sqrt[j];
        entries.push((i, j, w));
        entries.push((j, i, w));
    }
    entries.sort_by_key(|e| (e.0, e.1));
    NormalizedAdjacency { n, entries }
}
