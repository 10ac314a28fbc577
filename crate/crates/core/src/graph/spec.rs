//! JSON graph description files.
//!
//! A description is one of
//!
//! * a factory: `{"type": "path", "K": 7, "w": 1.0}` (also `cycle`, `star`,
//!   `complete`, `grid` with `dims`, `tree` with `branching`/`depth`),
//!   optionally with `labels` naming the nodes and `name` naming the key part;
//! * a product: `{"product": [<description>, ...]}`;
//! * an explicit graph: `{"nodes": ["a", ["b", "c"], ...], "edges": [[0, 1, 2.5], ...]}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    cartesian_product, make_complete, make_cycle, make_grid, make_path, make_star, make_tree, Edge, NodeKey,
    StratGraph,
};
use crate::error::{Error, Result};

fn default_weight() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KeySpec {
    Single(String),
    Tuple(Vec<String>),
}

impl From<KeySpec> for NodeKey {
    fn from(k: KeySpec) -> Self {
        match k {
            KeySpec::Single(s) => NodeKey(vec![s]),
            KeySpec::Tuple(v) => NodeKey(v),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EdgeSpec {
    Triple(usize, usize, f64),
    Object { i: usize, j: usize, w: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FactorySpec {
    Path {
        #[serde(rename = "K")]
        k: usize,
        #[serde(default = "default_weight")]
        w: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        labels: Option<Vec<String>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    Cycle {
        #[serde(rename = "K")]
        k: usize,
        #[serde(default = "default_weight")]
        w: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        labels: Option<Vec<String>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    Star {
        #[serde(rename = "K")]
        k: usize,
        #[serde(default = "default_weight")]
        w: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        labels: Option<Vec<String>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    Complete {
        #[serde(rename = "K")]
        k: usize,
        #[serde(default = "default_weight")]
        w: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        labels: Option<Vec<String>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    Grid {
        dims: Vec<usize>,
        #[serde(default = "default_weight")]
        w: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        names: Option<Vec<String>>,
    },
    Tree {
        branching: usize,
        depth: usize,
        #[serde(default = "default_weight")]
        w: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        labels: Option<Vec<String>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphSpec {
    Product {
        product: Vec<GraphSpec>,
    },
    Factory(FactorySpec),
    Explicit {
        nodes: Vec<KeySpec>,
        #[serde(default)]
        edges: Vec<EdgeSpec>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        key_names: Vec<String>,
    },
}

fn labelled(g: StratGraph, labels: &Option<Vec<String>>, name: &Option<String>) -> Result<StratGraph> {
    let g = match labels {
        Some(labels) => {
            if labels.len() != g.num_nodes() {
                return Err(Error::Graph(format!(
                    "{} labels given for {} nodes",
                    labels.len(),
                    g.num_nodes()
                )));
            }
            g.relabel(labels.iter().map(NodeKey::single).collect())?
        }
        None => g,
    };
    match name {
        Some(n) => g.with_key_names(vec![n.clone()]),
        None => Ok(g),
    }
}

impl FactorySpec {
    pub fn build(&self) -> Result<StratGraph> {
        match self {
            FactorySpec::Path { k, w, labels, name } => labelled(make_path(*k, *w)?, labels, name),
            FactorySpec::Cycle { k, w, labels, name } => labelled(make_cycle(*k, *w)?, labels, name),
            FactorySpec::Star { k, w, labels, name } => labelled(make_star(*k, *w)?, labels, name),
            FactorySpec::Complete { k, w, labels, name } => labelled(make_complete(*k, *w)?, labels, name),
            FactorySpec::Tree {
                branching,
                depth,
                w,
                labels,
                name,
            } => labelled(make_tree(*branching, *depth, *w)?, labels, name),
            FactorySpec::Grid { dims, w, names } => {
                let g = make_grid(dims, *w)?;
                match names {
                    Some(n) => g.with_key_names(n.clone()),
                    None => Ok(g),
                }
            }
        }
    }
}

impl GraphSpec {
    pub fn build(&self) -> Result<StratGraph> {
        match self {
            GraphSpec::Factory(f) => f.build(),
            GraphSpec::Product { product } => {
                let mut parts = product.iter();
                let first = parts
                    .next()
                    .ok_or_else(|| Error::Graph("product of zero graphs".into()))?;
                let mut g = first.build()?;
                for p in parts {
                    g = cartesian_product(&g, &p.build()?)?;
                }
                Ok(g)
            }
            GraphSpec::Explicit {
                nodes,
                edges,
                key_names,
            } => {
                let nodes = nodes.iter().cloned().map(NodeKey::from).collect();
                let edges = edges
                    .iter()
                    .map(|e| match *e {
                        EdgeSpec::Triple(i, j, w) | EdgeSpec::Object { i, j, w } => Edge { i, j, weight: w },
                    })
                    .collect();
                StratGraph::new(nodes, edges)?.with_key_names(key_names.clone())
            }
        }
    }

    /// Explicit description of an already built graph.
    pub fn explicit(g: &StratGraph) -> Self {
        GraphSpec::Explicit {
            nodes: g.nodes().iter().map(|k| KeySpec::Tuple(k.0.clone())).collect(),
            edges: g
                .edges()
                .iter()
                .map(|e| EdgeSpec::Triple(e.i, e.j, e.weight))
                .collect(),
            key_names: g.key_names().to_vec(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
