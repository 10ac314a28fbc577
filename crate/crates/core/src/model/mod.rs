//! Stratified model: a base loss, a local regularizer and a regularization
//! graph bound together, with fitting, prediction, scoring, hyper-parameter
//! validation and a JSON model file.

mod cv;
mod dataset;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use cv::{cross_validate, fold_assignment, holdout, parse_grid, CvOptions, CvRow, CvTable, GridCell};
pub use dataset::{bind_and_group, unknown_key, Dataset, Standardization};

use crate::block::ParamBlock;
use crate::error::{Error, Result};
use crate::graph::GraphSpec;
use crate::graph::{NodeKey, StratGraph};
use crate::losses::{LossKind, LossModel, Metric, Prediction};
use crate::regularizers::{ConstraintSet, Regularizer};
use crate::solver::{self, Problem, SolverConfig, SolverReport, SolverState};

pub const MODEL_FORMAT: &str = "stratfit-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub solver: SolverConfig,
    /// Standardize features to zero mean and unit variance before fitting.
    pub standardize: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            solver: SolverConfig::default(),
            standardize: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub solver: SolverReport,
    /// Objective at the returned parameters; `None` when it is not finite.
    pub objective: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub model: StratifiedModel,
    pub report: FitReport,
    /// Final solver state, for warm-starting a related fit.
    pub state: SolverState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StratifiedModel {
    loss: LossModel,
    reg: Regularizer,
    graph: StratGraph,
    standardization: Option<Standardization>,
    params: Option<ParamBlock>,
}

impl StratifiedModel {
    /// Unfitted model. Discrete distributions are constrained to the
    /// probability simplex unless the regularizer already names a set.
    pub fn new(loss: LossModel, reg: Regularizer, graph: StratGraph) -> Result<Self> {
        loss.validate()?;
        let mut reg = reg;
        if matches!(loss.kind, LossKind::DiscreteDist { .. }) && reg.set == ConstraintSet::FullSpace {
            reg.set = ConstraintSet::ProbabilitySimplex;
        }
        reg.validate()?;
        if reg.skip_intercept && reg.intercept_index >= loss.param_dim() {
            return Err(Error::InvalidArgument(format!(
                "intercept index {} out of range for parameter dimension {}",
                reg.intercept_index,
                loss.param_dim()
            )));
        }
        Ok(StratifiedModel {
            loss,
            reg,
            graph,
            standardization: None,
            params: None,
        })
    }

    pub fn loss(&self) -> &LossModel {
        &self.loss
    }

    pub fn regularizer(&self) -> &Regularizer {
        &self.reg
    }

    pub fn graph(&self) -> &StratGraph {
        &self.graph
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    pub fn params(&self) -> Option<&ParamBlock> {
        self.params.as_ref()
    }

    pub fn is_fitted(&self) -> bool {
        self.params.is_some()
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn param_dim(&self) -> usize {
        self.loss.param_dim()
    }

    pub fn with_regularizer(&self, reg: Regularizer) -> Result<Self> {
        let mut m = StratifiedModel::new(self.loss.clone(), reg, self.graph.clone())?;
        m.standardization = self.standardization.clone();
        m.params = self.params.clone();
        Ok(m)
    }

    pub fn with_graph(&self, graph: StratGraph) -> Result<Self> {
        if graph.num_nodes() != self.num_nodes() && self.params.is_some() {
            return Err(Error::Shape {
                expected: self.num_nodes(),
                got: graph.num_nodes(),
                context: "replacement graph",
            });
        }
        let mut m = self.clone();
        m.graph = graph;
        Ok(m)
    }

    /// Replaces the fitted parameters (one row per graph node).
    pub fn with_params(&self, params: ParamBlock, standardization: Option<Standardization>) -> Result<Self> {
        if params.shape() != (self.num_nodes(), self.param_dim()) {
            return Err(Error::Shape {
                expected: self.num_nodes() * self.param_dim(),
                got: params.rows() * params.cols(),
                context: "model parameters",
            });
        }
        let mut m = self.clone();
        m.params = Some(params);
        m.standardization = standardization;
        Ok(m)
    }

    pub fn fit(&self, data: &Dataset, opts: &FitOptions) -> Result<FitResult> {
        self.fit_warm(data, opts, None)
    }

    /// Fits on `data`, starting the solver from `warm` when given.
    pub fn fit_warm(&self, data: &Dataset, opts: &FitOptions, warm: Option<&SolverState>) -> Result<FitResult> {
        let mut loss = self.loss.clone();
        if matches!(loss.kind, LossKind::GaussianCovariance { .. }) && loss.center.is_none() {
            loss.center = data.outcome_mean();
        }
        let standardization =
            (loss.kind.uses_features() && opts.standardize).then(|| Standardization::fit(data));
        let groups = bind_and_group(&loss, data, &self.graph, standardization.as_ref())?;
        let lap = self.graph.laplacian();
        let problem = Problem::new(&loss, &groups, &self.reg, &lap)?;
        let out = solver::fit(&problem, &opts.solver, warm)?;
        let mut params = out.params;
        for k in 0..params.rows() {
            loss.project(params.row_mut(k));
        }
        let objective = problem.objective(&params).ok().filter(|v| v.is_finite());
        let model = StratifiedModel {
            loss,
            reg: self.reg.clone(),
            graph: self.graph.clone(),
            standardization,
            params: Some(params),
        };
        Ok(FitResult {
            model,
            report: FitReport {
                solver: out.report,
                objective,
            },
            state: out.state,
        })
    }

    fn fitted(&self) -> Result<&ParamBlock> {
        self.params.as_ref().ok_or(Error::Unfitted)
    }

    pub fn node_index(&self, key: &NodeKey) -> Result<usize> {
        self.graph.index_of(key).ok_or_else(|| unknown_key(&self.graph, key))
    }

    pub fn param_row(&self, key: &NodeKey) -> Result<&[f64]> {
        let params = self.fitted()?;
        Ok(params.row(self.node_index(key)?))
    }

    /// Prediction at node `key` for raw (unstandardized) features `x`.
    pub fn predict(&self, key: &NodeKey, x: Option<&[f64]>) -> Result<Prediction> {
        let theta = self.param_row(key)?;
        self.predict_row(theta, x)
    }

    fn predict_row(&self, theta: &[f64], x: Option<&[f64]>) -> Result<Prediction> {
        match (x, &self.standardization) {
            (Some(x), Some(s)) if self.loss.kind.uses_features() => {
                if x.len() != s.means.len() {
                    return Err(Error::Shape {
                        expected: s.means.len(),
                        got: x.len(),
                        context: "feature vector",
                    });
                }
                let mut z = vec![0.0; x.len()];
                s.apply(x, &mut z);
                self.loss.predict(theta, Some(&z))
            }
            _ => self.loss.predict(theta, x),
        }
    }

    /// One prediction per record of `data`, in record order.
    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<Prediction>> {
        let params = self.fitted()?;
        let uses_x = self.loss.kind.uses_features();
        if uses_x && data.n_features() != self.loss.n_features {
            return Err(Error::Data(format!(
                "model has {} features, dataset has {}",
                self.loss.n_features,
                data.n_features()
            )));
        }
        let idx = data.node_indices(&self.graph)?;
        idx.iter()
            .enumerate()
            .map(|(i, &k)| self.predict_row(params.row(k), uses_x.then(|| data.features(i))))
            .collect()
    }

    /// Mean per-record `metric` over `data`.
    pub fn score(&self, data: &Dataset, metric: Metric) -> Result<f64> {
        let params = self.fitted()?;
        let groups = bind_and_group(&self.loss, data, &self.graph, self.standardization.as_ref())?;
        self.loss.score(metric, params, &groups)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            meta: Meta {
                format: MODEL_FORMAT.into(),
                version: MODEL_VERSION,
                loss: self.loss.clone(),
                num_nodes: self.num_nodes(),
                param_dim: self.param_dim(),
            },
            regularizer: self.reg.clone(),
            graph: GraphSpec::explicit(&self.graph),
            standardization: self.standardization.clone(),
            params: self.params.as_ref().map(|p| p.to_rows()),
        };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::ModelFile(e.to_string()))?;
        if file.meta.format != MODEL_FORMAT {
            return Err(Error::ModelFile(format!("unrecognized format '{}'", file.meta.format)));
        }
        if file.meta.version != MODEL_VERSION {
            return Err(Error::ModelFile(format!(
                "unsupported version {} (expected {MODEL_VERSION})",
                file.meta.version
            )));
        }
        let graph = file.graph.build()?;
        if graph.num_nodes() != file.meta.num_nodes {
            return Err(Error::ModelFile(format!(
                "meta declares {} nodes but the graph has {}",
                file.meta.num_nodes,
                graph.num_nodes()
            )));
        }
        let mut model = StratifiedModel::new(file.meta.loss, file.regularizer, graph)?;
        if model.param_dim() != file.meta.param_dim {
            return Err(Error::ModelFile(format!(
                "meta declares parameter dimension {} but the loss has {}",
                file.meta.param_dim,
                model.param_dim()
            )));
        }
        model.standardization = file.standardization;
        if let Some(rows) = file.params {
            if rows.len() != model.num_nodes() {
                return Err(Error::ModelFile(format!(
                    "{} parameter rows for {} graph nodes",
                    rows.len(),
                    model.num_nodes()
                )));
            }
            let block = ParamBlock::from_rows(&rows)
                .filter(|b| b.cols() == model.param_dim())
                .ok_or_else(|| {
                    Error::ModelFile(format!("parameter rows must all have length {}", model.param_dim()))
                })?;
            model.params = Some(block);
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct Meta {
    format: String,
    version: u32,
    loss: LossModel,
    num_nodes: usize,
    param_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    meta: Meta,
    regularizer: Regularizer,
    graph: GraphSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    standardization: Option<Standardization>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    params: Option<Vec<Vec<f64>>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{make_path, make_star};

    fn bernoulli_star() -> (StratifiedModel, Dataset) {
        let loss = LossModel::new(LossKind::BernoulliDist, 0).unwrap();
        let g = make_star(2, 1.0).unwrap().scaled(0.0).unwrap();
        let model = StratifiedModel::new(loss, Regularizer::zero(), g).unwrap();
        let mut ds = Dataset::new(vec!["g".into()], vec![], vec!["y".into()]);
        for _ in 0..5 {
            ds.push(NodeKey::single("0"), &[], &[1.0]).unwrap();
        }
        ds.push(NodeKey::single("1"), &[], &[0.0]).unwrap();
        ds.push(NodeKey::single("1"), &[], &[1.0]).unwrap();
        (model, ds)
    }

    #[test]
    fn all_ones_hits_domain_boundary() {
        let (model, ds) = bernoulli_star();
        let opts = FitOptions {
            solver: SolverConfig {
                eps_abs: 1e-10,
                eps_rel: 1e-10,
                ..Default::default()
            },
            ..Default::default()
        };
        let fit = model.fit(&ds, &opts).unwrap();
        assert!(fit.report.solver.converged);
        let p = fit.model.params().unwrap();
        let eps = model.loss().eps;
        assert!((p.row(0)[0] - (1.0 - eps)).abs() < 1e-6, "{:?}", p.row(0));
        assert!((p.row(1)[0] - 0.5).abs() < 1e-6);
        assert!(p.row(0)[0] <= 1.0 - eps);
    }

    #[test]
    fn unfitted_and_unknown_key() {
        let (model, ds) = bernoulli_star();
        assert!(matches!(model.score(&ds, Metric::Anll), Err(Error::Unfitted)));
        let fit = model.fit(&ds, &FitOptions::default()).unwrap().model;
        assert!(matches!(
            fit.predict(&NodeKey::single("9"), None),
            Err(Error::UnknownKey { .. })
        ));
    }

    #[test]
    fn model_file_round_trip() {
        let (model, ds) = bernoulli_star();
        let fit = model.fit(&ds, &FitOptions::default()).unwrap().model;
        let text = fit.to_json().unwrap();
        let back = StratifiedModel::from_json(&text).unwrap();
        assert_eq!(back, fit);
        let bits = |m: &StratifiedModel| -> Vec<u64> {
            m.params().unwrap().as_slice().iter().map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(&back), bits(&fit));
    }

    #[test]
    fn model_file_checks() {
        let (model, ds) = bernoulli_star();
        let fit = model.fit(&ds, &FitOptions::default()).unwrap().model;
        let mut v: serde_json::Value = serde_json::from_str(&fit.to_json().unwrap()).unwrap();
        v["meta"]["num_nodes"] = 3.into();
        assert!(StratifiedModel::from_json(&v.to_string()).is_err());
        v["meta"]["num_nodes"] = 2.into();
        v["meta"]["version"] = 99.into();
        assert!(StratifiedModel::from_json(&v.to_string()).is_err());
        v["meta"]["version"] = 1.into();
        v.as_object_mut().unwrap().remove("params");
        let unfitted = StratifiedModel::from_json(&v.to_string()).unwrap();
        assert!(!unfitted.is_fitted());
        assert!(StratifiedModel::from_json("{not json").is_err());
    }

    #[test]
    fn square_regression_predicts_raw_features() {
        let loss = LossModel::new(LossKind::SquareRegression, 2).unwrap();
        let g = make_path(2, 1.0).unwrap();
        let model = StratifiedModel::new(loss, Regularizer::zero(), g).unwrap();
        let mut ds = Dataset::new(vec!["g".into()], vec!["one".into(), "x".into()], vec!["y".into()]);
        for (k, x) in [("0", 1.0), ("0", 2.0), ("0", 3.0), ("1", 4.0), ("1", 5.0), ("1", 6.0)] {
            ds.push(NodeKey::single(k), &[1.0, x], &[1.0 + 2.0 * x]).unwrap();
        }
        let opts = FitOptions {
            solver: SolverConfig {
                eps_abs: 1e-10,
                eps_rel: 1e-10,
                max_iter: 5000,
                ..Default::default()
            },
            ..Default::default()
        };
        let fit = model.fit(&ds, &opts).unwrap().model;
        // data are exactly linear, so shared coefficients interpolate
        assert!(fit.score(&ds, Metric::Rmse).unwrap() < 1e-6);
        match fit.predict(&NodeKey::single("1"), Some(&[1.0, 10.0])).unwrap() {
            Prediction::Value(v) => assert!((v - 21.0).abs() < 1e-5, "{v}"),
            other => panic!("{other:?}"),
        }
    }
}
