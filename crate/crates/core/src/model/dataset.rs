//! Record sets `(z, x, y)`, feature standardization and grouping by node.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeKey, StratGraph};
use crate::losses::{LossModel, NodeData};

/// Records with a stratification key, optional features and an optional
/// outcome. Features and outcomes are stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    key_names: Vec<String>,
    feature_names: Vec<String>,
    outcome_names: Vec<String>,
    keys: Vec<NodeKey>,
    features: Vec<f64>,
    outcomes: Vec<f64>,
}

fn parse_number(s: &str, line: u64, column: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Data(format!("line {line}, column '{column}': '{s}' is not a number")))
}

impl Dataset {
    /// An empty dataset with the given column names. An empty
    /// `outcome_names` means the records carry no outcome.
    pub fn new(key_names: Vec<String>, feature_names: Vec<String>, outcome_names: Vec<String>) -> Self {
        Dataset {
            key_names,
            feature_names,
            outcome_names,
            keys: Vec::new(),
            features: Vec::new(),
            outcomes: Vec::new(),
        }
    }

    pub fn push(&mut self, key: NodeKey, x: &[f64], y: &[f64]) -> Result<()> {
        if key.arity() != self.key_names.len() {
            return Err(Error::Shape {
                expected: self.key_names.len(),
                got: key.arity(),
                context: "record key arity",
            });
        }
        if x.len() != self.feature_names.len() {
            return Err(Error::Shape {
                expected: self.feature_names.len(),
                got: x.len(),
                context: "record feature count",
            });
        }
        if y.len() != self.outcome_names.len() {
            return Err(Error::Shape {
                expected: self.outcome_names.len(),
                got: y.len(),
                context: "record outcome count",
            });
        }
        self.keys.push(key);
        self.features.extend_from_slice(x);
        self.outcomes.extend_from_slice(y);
        Ok(())
    }

    /// Parses delimited text with a header. Columns named `z:<name>` form the
    /// key, `x:<name>` the features and `y` (or `y:<name>`) the outcome;
    /// anything else is ignored.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        let mut zc = Vec::new();
        let mut xc = Vec::new();
        let mut yc = Vec::new();
        let mut names = (Vec::new(), Vec::new(), Vec::new());
        for (i, h) in header.iter().enumerate() {
            if let Some(n) = h.strip_prefix("z:") {
                zc.push(i);
                names.0.push(n.to_string());
            } else if let Some(n) = h.strip_prefix("x:") {
                xc.push(i);
                names.1.push(n.to_string());
            } else if h == "y" || h.starts_with("y:") {
                yc.push(i);
                names.2.push(h.to_string());
            }
        }
        if zc.is_empty() {
            return Err(Error::Data("no stratification columns (named 'z:<name>') in header".into()));
        }
        let mut ds = Dataset::new(names.0, names.1, names.2);
        let mut x = vec![0.0; xc.len()];
        let mut y = vec![0.0; yc.len()];
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let field = |i: usize| rec.get(i).unwrap_or("");
            let key = NodeKey(zc.iter().map(|&i| field(i).to_string()).collect());
            for (slot, &i) in x.iter_mut().zip(&xc) {
                *slot = parse_number(field(i), line, &header[i])?;
            }
            for (slot, &i) in y.iter_mut().zip(&yc) {
                *slot = parse_number(field(i), line, &header[i])?;
            }
            ds.push(key, &x, &y)?;
        }
        Ok(ds)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn key_names(&self) -> &[String] {
        &self.key_names
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn outcome_names(&self) -> &[String] {
        &self.outcome_names
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn outcome_dim(&self) -> usize {
        self.outcome_names.len()
    }

    pub fn has_outcomes(&self) -> bool {
        !self.outcome_names.is_empty()
    }

    pub fn keys(&self) -> &[NodeKey] {
        &self.keys
    }

    pub fn key(&self, i: usize) -> &NodeKey {
        &self.keys[i]
    }

    pub fn features(&self, i: usize) -> &[f64] {
        let n = self.n_features();
        &self.features[i * n..(i + 1) * n]
    }

    pub fn outcome(&self, i: usize) -> &[f64] {
        let m = self.outcome_dim();
        &self.outcomes[i * m..(i + 1) * m]
    }

    /// Records at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut out = Dataset::new(
            self.key_names.clone(),
            self.feature_names.clone(),
            self.outcome_names.clone(),
        );
        for &i in indices {
            out.keys.push(self.keys[i].clone());
            out.features.extend_from_slice(self.features(i));
            out.outcomes.extend_from_slice(self.outcome(i));
        }
        out
    }

    /// Column-wise mean of the outcomes, `None` when there are no records.
    pub fn outcome_mean(&self) -> Option<Vec<f64>> {
        if self.is_empty() {
            return None;
        }
        let m = self.outcome_dim();
        let mut mean = vec![0.0; m];
        for i in 0..self.len() {
            for (a, b) in mean.iter_mut().zip(self.outcome(i)) {
                *a += b;
            }
        }
        mean.iter_mut().for_each(|v| *v /= self.len() as f64);
        Some(mean)
    }

    /// Column permutation taking the dataset key order to the graph's.
    fn key_order(&self, g: &StratGraph) -> Result<Vec<usize>> {
        if self.key_names.len() != g.key_arity() {
            return Err(Error::Data(format!(
                "dataset has {} key columns but graph keys have {} parts",
                self.key_names.len(),
                g.key_arity()
            )));
        }
        if g.key_names().is_empty() {
            return Ok((0..self.key_names.len()).collect());
        }
        g.key_names()
            .iter()
            .map(|name| {
                self.key_names.iter().position(|n| n == name).ok_or_else(|| {
                    Error::Data(format!(
                        "graph key part '{name}' has no matching 'z:{name}' column (dataset has {:?})",
                        self.key_names
                    ))
                })
            })
            .collect()
    }

    /// Graph node index of every record.
    pub fn node_indices(&self, g: &StratGraph) -> Result<Vec<usize>> {
        let order = self.key_order(g)?;
        let identity = order.iter().enumerate().all(|(a, b)| a == *b);
        self.keys
            .iter()
            .map(|k| {
                let key = if identity {
                    k.clone()
                } else {
                    NodeKey(order.iter().map(|&c| k.0[c].clone()).collect())
                };
                g.index_of(&key).ok_or_else(|| unknown_key(g, &key))
            })
            .collect()
    }

    /// Distinct keys of `self` missing from `g`, in first-seen order.
    pub fn unknown_keys(&self, g: &StratGraph) -> Result<Vec<NodeKey>> {
        let order = self.key_order(g)?;
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for k in &self.keys {
            let key = NodeKey(order.iter().map(|&c| k.0[c].clone()).collect());
            if g.index_of(&key).is_none() && seen.insert(key.clone()) {
                out.push(key);
            }
        }
        Ok(out)
    }
}

/// Error for a key absent from `g`, listing up to three nearest known keys.
pub fn unknown_key(g: &StratGraph, key: &NodeKey) -> Error {
    let target = key.to_string();
    let mut scored: Vec<(usize, usize)> = g
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, k)| (strsim::levenshtein(&target, &k.to_string()), i))
        .collect();
    scored.sort();
    Error::UnknownKey {
        key: target,
        nearest: scored.iter().take(3).map(|&(_, i)| g.nodes()[i].to_string()).collect(),
    }
}

/// Per-feature affine map `x -> (x - mean) / scale` learned on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardization {
    /// Zero mean and unit variance per feature. Constant columns (such as an
    /// intercept) are left unchanged.
    pub fn fit(ds: &Dataset) -> Self {
        let n = ds.n_features();
        let count = ds.len() as f64;
        let mut means = vec![0.0; n];
        let mut scales = vec![1.0; n];
        if !ds.is_empty() {
            for i in 0..ds.len() {
                for (m, x) in means.iter_mut().zip(ds.features(i)) {
                    *m += x;
                }
            }
            means.iter_mut().for_each(|m| *m /= count);
            let mut var = vec![0.0; n];
            for i in 0..ds.len() {
                for ((v, x), m) in var.iter_mut().zip(ds.features(i)).zip(&means) {
                    *v += (x - m).powi(2);
                }
            }
            for j in 0..n {
                let sd = (var[j] / count).sqrt();
                if sd > 1e-12 * means[j].abs().max(1.0) {
                    scales[j] = sd;
                } else {
                    means[j] = 0.0;
                }
            }
        }
        Standardization {
            names: ds.feature_names().to_vec(),
            means,
            scales,
        }
    }

    pub fn identity(names: Vec<String>) -> Self {
        let n = names.len();
        Standardization {
            names,
            means: vec![0.0; n],
            scales: vec![1.0; n],
        }
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (((o, v), m), s) in out.iter_mut().zip(x).zip(&self.means).zip(&self.scales) {
            *o = (v - m) / s;
        }
    }
}

/// Groups the records of `ds` into one [`NodeData`] per graph node,
/// ingesting outcomes and standardizing features on the way. Nodes without
/// records get empty slices.
pub fn bind_and_group(
    loss: &LossModel,
    ds: &Dataset,
    g: &StratGraph,
    standardization: Option<&Standardization>,
) -> Result<Vec<NodeData>> {
    if !ds.has_outcomes() {
        return Err(Error::Data("dataset has no outcome column 'y'".into()));
    }
    let od = loss.kind.outcome_dim();
    if ds.outcome_dim() != od {
        return Err(Error::Data(format!(
            "loss expects {od} outcome column(s), dataset has {}",
            ds.outcome_dim()
        )));
    }
    let nf = if loss.kind.uses_features() {
        if ds.n_features() != loss.n_features {
            return Err(Error::Data(format!(
                "model has {} features, dataset has {}",
                loss.n_features,
                ds.n_features()
            )));
        }
        loss.n_features
    } else {
        0
    };
    let idx = ds.node_indices(g)?;
    let k = g.num_nodes();
    let mut feats: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut outs: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut buf = vec![0.0; nf];
    for (i, &node) in idx.iter().enumerate() {
        if nf > 0 {
            match standardization {
                Some(s) => s.apply(ds.features(i), &mut buf),
                None => buf.copy_from_slice(ds.features(i)),
            }
            feats[node].extend_from_slice(&buf);
        }
        for &y in ds.outcome(i) {
            let v = loss
                .ingest_outcome(y)
                .map_err(|e| Error::Data(format!("record {} (key {}): {e}", i + 1, ds.key(i))))?;
            outs[node].push(v);
        }
    }
    feats
        .into_iter()
        .zip(outs)
        .map(|(f, o)| loss.node_data(f, o))
        .collect()
}
