//! Token co-occurrence graphs: one node per distinct id, an undirected edge
//! between ids that appear within a sliding window, and self-loops.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;

pub const DEFAULT_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("window must be at least 2, got {0}")]
    Window(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenGraph {
    /// Distinct ids in first-occurrence order; node `i` is `node_ids[i]`.
    pub node_ids: Vec<u32>,
    /// Undirected edges `(u, v)` with `u < v`, self-loops excluded.
    pub edges: BTreeSet<(usize, usize)>,
}

impl TokenGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    /// Ids used for the embedding lookup of node features.
    pub fn feature_init(&self) -> &[u32] {
        &self.node_ids
    }

    /// Dense 0/1 adjacency with unit diagonal.
    pub fn adjacency(&self) -> Vec<Vec<u8>> {
        let n = self.num_nodes();
        let mut a = vec![vec![0u8; n]; n];
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = 1;
        }
        for &(u, v) in &self.edges {
            a[u][v] = 1;
            a[v][u] = 1;
        }
        a
    }

    /// `D^-1/2 A D^-1/2` over the adjacency with self-loops, as an
    /// `n x n` tensor.
    pub fn normalized_adjacency(&self) -> Tensor {
        let n = self.num_nodes();
        let mut deg = vec![1.0f64; n];
        for &(u, v) in &self.edges {
            deg[u] += 1.0;
            deg[v] += 1.0;
        }
        let inv: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = inv[i] * inv[i];
        }
        for &(u, v) in &self.edges {
            let w = inv[u] * inv[v];
            data[u * n + v] = w;
            data[v * n + u] = w;
        }
        Tensor::new(vec![n, n], data).expect("square adjacency")
    }

    /// Same graph with nodes reordered: node `i` of the result is node
    /// `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> TokenGraph {
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        TokenGraph {
            node_ids: perm.iter().map(|&old| self.node_ids[old]).collect(),
            edges: self
                .edges
                .iter()
                .map(|&(u, v)| {
                    let (a, b) = (inverse[u], inverse[v]);
                    (a.min(b), a.max(b))
                })
                .collect(),
        }
    }

    /// Edge list text, one `u v` pair of node ids per line (self-loops
    /// included).
    pub fn edge_list(&self) -> String {
        let mut out = String::new();
        let mut all: BTreeSet<(u32, u32)> = self.node_ids.iter().map(|&id| (id, id)).collect();
        for &(u, v) in &self.edges {
            let (a, b) = (self.node_ids[u], self.node_ids[v]);
            all.insert((a.min(b), a.max(b)));
        }
        for (a, b) in all {
            writeln!(out, "{a} {b}").expect("write to string");
        }
        out
    }
}

pub fn build_token_graph(ids: &[u32], window: usize) -> Result<TokenGraph, GraphError> {
    if window < 2 {
        return Err(GraphError::Window(window));
    }
    let mut index: HashMap<u32, usize> = HashMap::new();
    let mut node_ids = Vec::new();
    let nodes: Vec<usize> = ids
        .iter()
        .map(|&id| {
            *index.entry(id).or_insert_with(|| {
                node_ids.push(id);
                node_ids.len() - 1
            })
        })
        .collect();
    let mut edges = BTreeSet::new();
    for (i, &u) in nodes.iter().enumerate() {
        for &v in nodes.iter().skip(i + 1).take(window - 1) {
            if u != v {
                edges.insert((u.min(v), u.max(v)));
            }
        }
    }
    Ok(TokenGraph { node_ids, edges })
}
