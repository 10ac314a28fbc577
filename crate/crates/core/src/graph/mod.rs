//! Regularization graphs over stratification values.
//!
//! A [`StratGraph`] is an undirected graph with strictly positive edge
//! weights. Zero weights are represented by the absence of an edge. Node
//! keys are tuples of strings, so products of graphs carry composite keys
//! such as `("3", "mon")`. Node indices follow insertion order and are the
//! row indices of the fitted parameter block.

mod laplacian;
mod spec;

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use laplacian::LaplacianMatrix;
pub use spec::{EdgeSpec, FactorySpec, GraphSpec, KeySpec};

/// Tuple of categorical values identifying one stratum.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeKey(pub Vec<String>);

impl NodeKey {
    pub fn single(value: impl Into<String>) -> Self {
        NodeKey(vec![value.into()])
    }

    pub fn arity(&self) -> usize {
        self.0.len()
    }

    pub fn concat(&self, other: &NodeKey) -> NodeKey {
        let mut parts = self.0.clone();
        parts.extend(other.0.iter().cloned());
        NodeKey(parts)
    }
}

impl fmt::Display for NodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("|"))
    }
}

impl<S: Into<String>> From<Vec<S>> for NodeKey {
    fn from(parts: Vec<S>) -> Self {
        NodeKey(parts.into_iter().map(Into::into).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Weighted undirected regularization graph.
#[derive(Clone, Debug)]
pub struct StratGraph {
    nodes: Vec<NodeKey>,
    edges: Vec<Edge>,
    index: HashMap<NodeKey, usize>,
    key_names: Vec<String>,
}

impl PartialEq for StratGraph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.edges == other.edges && self.key_names == other.key_names
    }
}

impl StratGraph {
    /// Builds a graph, rejecting duplicate keys, self-loops, out-of-range
    /// indices, nonpositive weights and repeated unordered pairs.
    pub fn new(nodes: Vec<NodeKey>, edges: Vec<Edge>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Graph("graph must have at least one node".into()));
        }
        let mut index = HashMap::with_capacity(nodes.len());
        let arity = nodes[0].arity();
        for (i, key) in nodes.iter().enumerate() {
            if key.arity() != arity {
                return Err(Error::Graph(format!(
                    "node key {key} has {} parts, expected {arity}",
                    key.arity()
                )));
            }
            if index.insert(key.clone(), i).is_some() {
                return Err(Error::Graph(format!("duplicate node key {key}")));
            }
        }
        let k = nodes.len();
        let mut seen = HashSet::with_capacity(edges.len());
        for e in &edges {
            if e.i >= k || e.j >= k {
                return Err(Error::Graph(format!(
                    "edge ({}, {}) out of range for {k} nodes",
                    e.i, e.j
                )));
            }
            if e.i == e.j {
                return Err(Error::Graph(format!("self-loop at node {}", e.i)));
            }
            if !(e.weight > 0.0 && e.weight.is_finite()) {
                return Err(Error::Graph(format!(
                    "edge ({}, {}) has non-positive or non-finite weight {}",
                    e.i, e.j, e.weight
                )));
            }
            let pair = (e.i.min(e.j), e.i.max(e.j));
            if !seen.insert(pair) {
                return Err(Error::Graph(format!("duplicate edge ({}, {})", pair.0, pair.1)));
            }
        }
        Ok(StratGraph {
            nodes,
            edges,
            index,
            key_names: Vec::new(),
        })
    }

    /// Graph with `k` nodes keyed `"0".."k-1"` and the given index edges.
    pub fn from_index_edges(k: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let nodes = (0..k).map(|i| NodeKey::single(i.to_string())).collect();
        let edges = edges
            .into_iter()
            .map(|(i, j, weight)| Edge { i, j, weight })
            .collect();
        StratGraph::new(nodes, edges)
    }

    pub fn with_key_names(mut self, names: Vec<String>) -> Result<Self> {
        if !names.is_empty() && names.len() != self.key_arity() {
            return Err(Error::Graph(format!(
                "{} key names given for keys of arity {}",
                names.len(),
                self.key_arity()
            )));
        }
        self.key_names = names;
        Ok(self)
    }

    /// Replaces node keys (same count, same order) keeping the edge set.
    pub fn relabel(self, nodes: Vec<NodeKey>) -> Result<Self> {
        if nodes.len() != self.nodes.len() {
            return Err(Error::Shape {
                expected: self.nodes.len(),
                got: nodes.len(),
                context: "relabel node count",
            });
        }
        let names = self.key_names;
        let g = StratGraph::new(nodes, self.edges)?;
        if names.len() == g.key_arity() {
            g.with_key_names(names)
        } else {
            Ok(g)
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[NodeKey] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn key_names(&self) -> &[String] {
        &self.key_names
    }

    pub fn key_arity(&self) -> usize {
        self.nodes[0].arity()
    }

    pub fn index_of(&self, key: &NodeKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    /// Weighted degree of every node, i.e. the Laplacian diagonal.
    pub fn degrees(&self) -> Vec<f64> {
        let mut deg = vec![0.0; self.nodes.len()];
        for e in &self.edges {
            deg[e.i] += e.weight;
            deg[e.j] += e.weight;
        }
        deg
    }

    /// Multiplies all weights by `factor`. A zero factor drops every edge,
    /// which yields the separately fitted model.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor >= 0.0 && factor.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "edge weight scale must be finite and nonnegative, got {factor}"
            )));
        }
        let edges = if factor == 0.0 {
            Vec::new()
        } else {
            self.edges
                .iter()
                .map(|e| Edge {
                    weight: e.weight * factor,
                    ..*e
                })
                .collect()
        };
        Ok(StratGraph {
            nodes: self.nodes.clone(),
            edges,
            index: self.index.clone(),
            key_names: self.key_names.clone(),
        })
    }

    pub fn laplacian(&self) -> LaplacianMatrix {
        LaplacianMatrix::from_graph(self)
    }

    /// Laplacian regularization `(1/2) sum_{(i,j) in E} w_ij ||theta_i - theta_j||^2`
    /// evaluated edge by edge on a row-major `K x n` parameter slice.
    pub fn pairwise_penalty(&self, params: &[f64], n: usize) -> f64 {
        let mut total = 0.0;
        for e in &self.edges {
            let a = &params[e.i * n..(e.i + 1) * n];
            let b = &params[e.j * n..(e.j + 1) * n];
            let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            total += e.weight * d2;
        }
        0.5 * total
    }

    /// Connected components as a node-to-component label vector.
    pub fn components(&self) -> (usize, Vec<usize>) {
        let k = self.nodes.len();
        let mut adj = vec![Vec::new(); k];
        for e in &self.edges {
            adj[e.i].push(e.j);
            adj[e.j].push(e.i);
        }
        let mut label = vec![usize::MAX; k];
        let mut count = 0;
        let mut queue = VecDeque::new();
        for start in 0..k {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = count;
            queue.push_back(start);
            while let Some(v) = queue.pop_front() {
                for &w in &adj[v] {
                    if label[w] == usize::MAX {
                        label[w] = count;
                        queue.push_back(w);
                    }
                }
            }
            count += 1;
        }
        (count, label)
    }

    pub fn is_connected(&self) -> bool {
        self.components().0 == 1
    }

    /// Warnings worth surfacing before a fit.
    pub fn warnings(&self) -> Vec<String> {
        let (count, _) = self.components();
        if count > 1 {
            vec![format!(
                "regularization graph has {count} connected components; each is smoothed independently"
            )]
        } else {
            Vec::new()
        }
    }
}

fn check_weight(w: f64) -> Result<()> {
    if w > 0.0 && w.is_finite() {
        Ok(())
    } else {
        Err(Error::Graph(format!("edge weight must be positive and finite, got {w}")))
    }
}

fn check_size(k: usize, what: &str) -> Result<()> {
    if k == 0 {
        Err(Error::Graph(format!("{what} must be at least 1")))
    } else {
        Ok(())
    }
}

/// Path `0 - 1 - ... - (k-1)`.
pub fn make_path(k: usize, w: f64) -> Result<StratGraph> {
    check_size(k, "path length")?;
    check_weight(w)?;
    StratGraph::from_index_edges(k, (1..k).map(|i| (i - 1, i, w)))
}

/// Closed chain. For `k <= 2` this degenerates to a path, since a cycle would
/// repeat the single pair.
pub fn make_cycle(k: usize, w: f64) -> Result<StratGraph> {
    check_size(k, "cycle length")?;
    check_weight(w)?;
    let mut edges: Vec<_> = (1..k).map(|i| (i - 1, i, w)).collect();
    if k > 2 {
        edges.push((k - 1, 0, w));
    }
    StratGraph::from_index_edges(k, edges)
}

/// Star with internal vertex 0.
pub fn make_star(k: usize, w: f64) -> Result<StratGraph> {
    check_size(k, "star size")?;
    check_weight(w)?;
    StratGraph::from_index_edges(k, (1..k).map(|i| (0, i, w)))
}

pub fn make_complete(k: usize, w: f64) -> Result<StratGraph> {
    check_size(k, "complete graph size")?;
    check_weight(w)?;
    let edges = (0..k).flat_map(|i| ((i + 1)..k).map(move |j| (i, j, w)));
    StratGraph::from_index_edges(k, edges)
}

/// Integer lattice with the given side lengths. Keys are coordinate tuples,
/// ordered row-major (last coordinate fastest), so `make_grid(&[m, n], w)`
/// matches `cartesian_product(path(m, w), path(n, w))` node for node.
pub fn make_grid(dims: &[usize], w: f64) -> Result<StratGraph> {
    if dims.is_empty() {
        return Err(Error::Graph("grid needs at least one dimension".into()));
    }
    for &d in dims {
        check_size(d, "grid side")?;
    }
    check_weight(w)?;
    let mut g = make_path(dims[0], w)?;
    for &d in &dims[1..] {
        g = cartesian_product(&g, &make_path(d, w)?)?;
    }
    Ok(g)
}

/// Complete `branching`-ary tree with `depth` levels below the root, nodes
/// numbered breadth first.
pub fn make_tree(branching: usize, depth: usize, w: f64) -> Result<StratGraph> {
    check_size(branching, "tree branching")?;
    check_weight(w)?;
    let mut edges = Vec::new();
    let mut level_start = 0;
    let mut level_len = 1;
    let mut next = 1;
    for _ in 0..depth {
        for parent in level_start..level_start + level_len {
            for _ in 0..branching {
                edges.push((parent, next, w));
                next += 1;
            }
        }
        level_start += level_len;
        level_len *= branching;
    }
    StratGraph::from_index_edges(next, edges)
}

/// Weighted Cartesian product. Node `(a, u)` sits at index `a * |V2| + u`;
/// `(a, u)-(b, u)` carries `g1`'s weight on `a-b` and `(a, u)-(a, v)` carries
/// `g2`'s weight on `u-v`.
pub fn cartesian_product(g1: &StratGraph, g2: &StratGraph) -> Result<StratGraph> {
    let n1 = g1.num_nodes();
    let n2 = g2.num_nodes();
    let mut nodes = Vec::with_capacity(n1 * n2);
    for a in g1.nodes() {
        for u in g2.nodes() {
            nodes.push(a.concat(u));
        }
    }
    let mut edges = Vec::with_capacity(n2 * g1.num_edges() + n1 * g2.num_edges());
    for e in g1.edges() {
        for u in 0..n2 {
            edges.push(Edge {
                i: e.i * n2 + u,
                j: e.j * n2 + u,
                weight: e.weight,
            });
        }
    }
    for a in 0..n1 {
        for e in g2.edges() {
            edges.push(Edge {
                i: a * n2 + e.i,
                j: a * n2 + e.j,
                weight: e.weight,
            });
        }
    }
    let g = StratGraph::new(nodes, edges)?;
    if !g1.key_names.is_empty() && !g2.key_names.is_empty() {
        let mut names = g1.key_names.clone();
        names.extend(g2.key_names.iter().cloned());
        g.with_key_names(names)
    } else {
        Ok(g)
    }
}
