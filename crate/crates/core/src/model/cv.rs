//! Hyper-parameter selection by k-fold cross-validation or a holdout set.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, FitOptions, StratifiedModel};
use crate::error::{Error, Result};
use crate::losses::Metric;
use crate::regularizers::Regularizer;
use crate::solver::SolverState;

fn one() -> f64 {
    1.0
}

/// One hyper-parameter combination: a factor applied to every edge weight
/// and optionally a replacement local regularizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    #[serde(default = "one")]
    pub laplacian_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reg: Option<Regularizer>,
}

impl GridCell {
    pub fn scale(s: f64) -> Self {
        GridCell {
            laplacian_scale: s,
            reg: None,
        }
    }

    /// The template with this cell's hyper-parameters applied.
    pub fn apply(&self, template: &StratifiedModel) -> Result<StratifiedModel> {
        if !(self.laplacian_scale >= 0.0 && self.laplacian_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "laplacian scale must be finite and nonnegative, got {}",
                self.laplacian_scale
            )));
        }
        let m = template.with_graph(template.graph().scaled(self.laplacian_scale)?)?;
        match &self.reg {
            Some(r) => m.with_regularizer(r.clone()),
            None => Ok(m),
        }
    }

    pub fn reg_label(&self) -> String {
        self.reg
            .as_ref()
            .and_then(|r| serde_json::to_string(r).ok())
            .unwrap_or_default()
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum GridSpec {
    Cells(Vec<GridCell>),
    Product {
        #[serde(default)]
        laplacian_scale: Vec<f64>,
        #[serde(default)]
        reg: Vec<Regularizer>,
    },
}

/// Parses a grid: a JSON list of cells, a JSON object
/// `{"laplacian_scale": [...], "reg": [...]}` expanded as a product, or a
/// comma-separated list of Laplacian scales.
pub fn parse_grid(text: &str) -> Result<Vec<GridCell>> {
    let t = text.trim();
    let cells = if t.starts_with('[') || t.starts_with('{') {
        match serde_json::from_str::<GridSpec>(t)? {
            GridSpec::Cells(c) => c,
            GridSpec::Product { laplacian_scale, reg } => {
                let scales = if laplacian_scale.is_empty() { vec![1.0] } else { laplacian_scale };
                let mut out = Vec::new();
                for s in scales {
                    if reg.is_empty() {
                        out.push(GridCell::scale(s));
                    }
                    for r in &reg {
                        out.push(GridCell {
                            laplacian_scale: s,
                            reg: Some(r.clone()),
                        });
                    }
                }
                out
            }
        }
    } else {
        t.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map(GridCell::scale)
                    .map_err(|_| Error::InvalidArgument(format!("grid value '{s}' is not a number")))
            })
            .collect::<Result<_>>()?
    };
    if cells.is_empty() {
        return Err(Error::InvalidArgument("empty hyper-parameter grid".into()));
    }
    Ok(cells)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvOptions {
    pub folds: usize,
    pub seed: u64,
    /// Defaults to the loss's natural metric.
    pub metric: Option<Metric>,
    /// Split each node's records across folds separately instead of
    /// splitting the whole record set uniformly.
    pub stratify_by_node: bool,
    pub fit: FitOptions,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            folds: 5,
            seed: 0,
            metric: None,
            stratify_by_node: false,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub cell: GridCell,
    /// Validation score per fold; `None` for folds without validation records.
    pub fold_scores: Vec<Option<f64>>,
    pub mean: f64,
    pub std: f64,
    /// Every fit for this cell reached tolerance.
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvTable {
    pub metric: Metric,
    pub rows: Vec<CvRow>,
    /// Index of the row with the lowest mean score.
    pub best: Option<usize>,
    /// Folds whose validation part was empty.
    pub empty_folds: Vec<usize>,
}

impl CvTable {
    pub fn best_row(&self) -> Option<&CvRow> {
        self.best.map(|i| &self.rows[i])
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "cell",
            "laplacian_scale",
            "regularizer",
            "metric",
            "mean",
            "std",
            "folds_scored",
            "converged",
            "best",
        ])?;
        for (i, r) in self.rows.iter().enumerate() {
            let scored = r.fold_scores.iter().filter(|s| s.is_some()).count();
            out.write_record([
                i.to_string(),
                r.cell.laplacian_scale.to_string(),
                r.cell.reg_label(),
                self.metric.to_string(),
                r.mean.to_string(),
                r.std.to_string(),
                scored.to_string(),
                r.converged.to_string(),
                (self.best == Some(i)).to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::Data(format!("writing table: {e}")))?;
        Ok(())
    }
}

/// Fold index of each record, deterministic in `seed`. With `nodes` given,
/// each node's records are dealt round-robin separately so that every fold
/// sees a share of every node.
pub fn fold_assignment(n: usize, folds: usize, seed: u64, nodes: Option<&[usize]>) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; n];
    match nodes {
        None => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            for (pos, &i) in order.iter().enumerate() {
                fold[i] = pos % folds;
            }
        }
        Some(nodes) => {
            let k = nodes.iter().copied().max().map_or(0, |m| m + 1);
            let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k];
            for (i, &g) in nodes.iter().enumerate() {
                groups[g].push(i);
            }
            let mut offset = 0;
            for g in &mut groups {
                g.shuffle(&mut rng);
                for (pos, &i) in g.iter().enumerate() {
                    fold[i] = (offset + pos) % folds;
                }
                offset += g.len();
            }
        }
    }
    fold
}

/// Fits every grid cell on `train` in order, warm-starting each fit from the
/// previous one, and scores on `validation`.
fn evaluate_split(
    template: &StratifiedModel,
    train: &Dataset,
    validation: &Dataset,
    grid: &[GridCell],
    fit: &FitOptions,
    metric: Metric,
) -> Result<Vec<(Option<f64>, bool)>> {
    let mut warm: Option<SolverState> = None;
    let mut out = Vec::with_capacity(grid.len());
    for cell in grid {
        let model = cell.apply(template)?;
        let res = model.fit_warm(train, fit, warm.as_ref())?;
        let score = if validation.is_empty() {
            None
        } else {
            Some(res.model.score(validation, metric)?)
        };
        out.push((score, res.report.solver.converged));
        warm = Some(res.state);
    }
    Ok(out)
}

fn summarize(grid: &[GridCell], per_split: Vec<Vec<(Option<f64>, bool)>>, metric: Metric, empty: Vec<usize>) -> CvTable {
    let rows: Vec<CvRow> = grid
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let fold_scores: Vec<Option<f64>> = per_split.iter().map(|s| s[c].0).collect();
            let vals: Vec<f64> = fold_scores.iter().flatten().copied().collect();
            let mean = if vals.is_empty() {
                f64::NAN
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            };
            let std = if vals.len() > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            CvRow {
                cell: cell.clone(),
                fold_scores,
                mean,
                std,
                converged: per_split.iter().all(|s| s[c].1),
            }
        })
        .collect();
    let mut best: Option<usize> = None;
    for (i, r) in rows.iter().enumerate() {
        if r.mean.is_finite() && best.is_none_or(|b| r.mean < rows[b].mean) {
            best = Some(i);
        }
    }
    CvTable {
        metric,
        rows,
        best,
        empty_folds: empty,
    }
}

/// k-fold cross-validation of `template` over `grid`.
pub fn cross_validate(
    template: &StratifiedModel,
    data: &Dataset,
    grid: &[GridCell],
    opts: &CvOptions,
) -> Result<CvTable> {
    if opts.folds < 2 {
        return Err(Error::InvalidArgument("cross-validation needs at least 2 folds".into()));
    }
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty hyper-parameter grid".into()));
    }
    let metric = opts.metric.unwrap_or(template.loss().kind.default_metric());
    let nodes = data.node_indices(template.graph())?;
    let fold = fold_assignment(data.len(), opts.folds, opts.seed, opts.stratify_by_node.then_some(&nodes[..]));
    let mut per_split = Vec::with_capacity(opts.folds);
    let mut empty = Vec::new();
    for f in 0..opts.folds {
        let (val, train): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| fold[i] == f);
        if val.is_empty() {
            log::warn!("fold {f} has no validation records");
            empty.push(f);
        }
        per_split.push(evaluate_split(
            template,
            &data.subset(&train),
            &data.subset(&val),
            grid,
            &opts.fit,
            metric,
        )?);
    }
    Ok(summarize(grid, per_split, metric, empty))
}

/// Single train/validation split over `grid`.
pub fn holdout(
    template: &StratifiedModel,
    train: &Dataset,
    validation: &Dataset,
    grid: &[GridCell],
    fit: &FitOptions,
    metric: Option<Metric>,
) -> Result<CvTable> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty hyper-parameter grid".into()));
    }
    let metric = metric.unwrap_or(template.loss().kind.default_metric());
    let split = evaluate_split(template, train, validation, grid, fit, metric)?;
    let empty = if validation.is_empty() { vec![0] } else { vec![] };
    Ok(summarize(grid, vec![split], metric, empty))
}
