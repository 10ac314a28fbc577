//! Base data models: per-node empirical losses, their proximal operators,
//! predictors and held-out scores.
//!
//! The node-local loss is the plain sum of per-record losses over the
//! records assigned to that node. Parameter layouts:
//!
//! | kind                   | parameter                        |
//! |------------------------|----------------------------------|
//! | square regression      | `n` coefficients                 |
//! | logistic               | `n` coefficients                 |
//! | multinomial logistic   | `n x M`, row-major (`[f * M + c]`) |
//! | exponential regression | `n` coefficients                 |
//! | poisson / bernoulli    | scalar rate / probability        |
//! | gaussian covariance    | `m x m` precision matrix, row-major |
//! | discrete distribution  | `M` category weights             |

mod lbfgs;
mod prox;

use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::block::ParamBlock;
use crate::error::{Error, Result};

pub use lbfgs::{minimize as lbfgs_minimize, LbfgsResult, LbfgsSettings};

/// Default lower margin of bounded parameter domains.
pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LossKind {
    SquareRegression,
    Logistic,
    MultinomialLogistic { classes: usize },
    ExponentialRegression,
    PoissonDist,
    BernoulliDist,
    GaussianCovariance { dim: usize },
    DiscreteDist { categories: usize },
}

impl LossKind {
    /// Parses the short names used on the command line.
    pub fn from_name(name: &str, classes: Option<usize>) -> Result<Self> {
        let need = |what: &str| {
            classes.ok_or_else(|| Error::InvalidArgument(format!("loss '{name}' needs the number of {what}")))
        };
        Ok(match name {
            "square" | "square-regression" | "regression" => LossKind::SquareRegression,
            "logistic" => LossKind::Logistic,
            "multinomial" | "multinomial-logistic" => LossKind::MultinomialLogistic { classes: need("classes")? },
            "exponential" | "exponential-regression" => LossKind::ExponentialRegression,
            "poisson" | "poisson-dist" => LossKind::PoissonDist,
            "bernoulli" | "bernoulli-dist" => LossKind::BernoulliDist,
            "gaussian" | "gaussian-covariance" => LossKind::GaussianCovariance { dim: need("dimensions")? },
            "discrete" | "discrete-dist" => LossKind::DiscreteDist {
                categories: need("categories")?,
            },
            other => return Err(Error::InvalidArgument(format!("unknown loss '{other}'"))),
        })
    }

    pub fn uses_features(self) -> bool {
        matches!(
            self,
            LossKind::SquareRegression
                | LossKind::Logistic
                | LossKind::MultinomialLogistic { .. }
                | LossKind::ExponentialRegression
        )
    }

    pub fn outcome_dim(self) -> usize {
        match self {
            LossKind::GaussianCovariance { dim } => dim,
            _ => 1,
        }
    }

    pub fn default_metric(self) -> Metric {
        match self {
            LossKind::SquareRegression => Metric::Rmse,
            _ => Metric::Anll,
        }
    }
}

/// Settings of the inner quasi-Newton solve used by the smooth losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InnerOptions {
    /// Stop when `||grad|| <= tol * max(1, ||v||)`.
    pub tol: f64,
    pub max_iter: usize,
    pub memory: usize,
}

impl Default for InnerOptions {
    fn default() -> Self {
        InnerOptions {
            tol: 1e-9,
            max_iter: 100,
            memory: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    pub kind: LossKind,
    /// Feature count `n` for the models with features; 0 otherwise.
    pub n_features: usize,
    /// Margin of the bounded domains (`[eps, 1 - eps]`, `[eps, inf)`, `S >= eps I`).
    pub eps: f64,
    /// Mean subtracted from Gaussian outcomes before forming second moments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    #[serde(default)]
    pub inner: InnerOptions,
}

/// Records assigned to one node.
#[derive(Debug, Default)]
pub struct NodeData {
    n_features: usize,
    outcome_dim: usize,
    features: Vec<f64>,
    outcomes: Vec<f64>,
    count: usize,
    stats: OnceLock<Stats>,
}

impl Clone for NodeData {
    fn clone(&self) -> Self {
        NodeData {
            n_features: self.n_features,
            outcome_dim: self.outcome_dim,
            features: self.features.clone(),
            outcomes: self.outcomes.clone(),
            count: self.count,
            stats: OnceLock::new(),
        }
    }
}

#[derive(Debug)]
enum Stats {
    Gram { gram: DMatrix<f64>, xty: Vec<f64> },
    Sum { total: f64 },
    SecondMoment(DMatrix<f64>),
    Counts(Vec<f64>),
    None,
}

impl NodeData {
    pub fn empty() -> Self {
        NodeData::default()
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn outcome(&self, i: usize) -> &[f64] {
        &self.outcomes[i * self.outcome_dim..(i + 1) * self.outcome_dim]
    }

    fn y(&self, i: usize) -> f64 {
        self.outcomes[i * self.outcome_dim]
    }
}

/// Point or distributional prediction at one stratum.
#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Value(f64),
    /// `+1` or `-1`; ties (`x^T theta = 0`) predict `+1`.
    Label { label: f64, prob_positive: f64 },
    /// 1-based class index and class probabilities.
    Class { class: usize, probs: Vec<f64> },
    Exponential { rate: f64 },
    Poisson { rate: f64 },
    Bernoulli { p: f64 },
    Gaussian { mean: Vec<f64>, precision: Vec<f64> },
    /// 1-based most likely category and normalized probabilities.
    Discrete { mode: usize, probs: Vec<f64> },
}

impl Prediction {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Prediction::Value(v) => vec![*v],
            Prediction::Label { label, prob_positive } => vec![*label, *prob_positive],
            Prediction::Class { class, probs } | Prediction::Discrete { mode: class, probs } => {
                std::iter::once(*class as f64).chain(probs.iter().copied()).collect()
            }
            Prediction::Exponential { rate } => vec![*rate, 1.0 / rate],
            Prediction::Poisson { rate } => vec![*rate],
            Prediction::Bernoulli { p } => vec![*p],
            Prediction::Gaussian { precision, .. } => precision.clone(),
        }
    }

    /// Scalar point estimate of `y`, where one exists.
    pub fn point(&self) -> Option<f64> {
        match self {
            Prediction::Value(v) => Some(*v),
            Prediction::Label { label, .. } => Some(*label),
            Prediction::Class { class, .. } | Prediction::Discrete { mode: class, .. } => Some(*class as f64),
            Prediction::Exponential { rate } => Some(1.0 / rate),
            Prediction::Poisson { rate } => Some(*rate),
            Prediction::Bernoulli { p } => Some(*p),
            Prediction::Gaussian { .. } => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Anll,
    Rmse,
    #[serde(alias = "error_rate", alias = "error-rate")]
    Error,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anll" => Ok(Metric::Anll),
            "rmse" => Ok(Metric::Rmse),
            "error" | "error-rate" | "error_rate" => Ok(Metric::Error),
            other => Err(Error::InvalidArgument(format!("unknown metric '{other}'"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Anll => "anll",
            Metric::Rmse => "rmse",
            Metric::Error => "error",
        })
    }
}

#[derive(Clone, Debug)]
pub struct ProxOutcome {
    pub theta: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl ProxOutcome {
    fn exact(theta: Vec<f64>) -> Self {
        ProxOutcome {
            theta,
            converged: true,
            iterations: 0,
            grad_norm: 0.0,
        }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(s: &[f64]) -> f64 {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + s.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LossModel {
    pub fn new(kind: LossKind, n_features: usize) -> Result<Self> {
        let m = LossModel {
            kind,
            n_features: if kind.uses_features() { n_features } else { 0 },
            eps: DEFAULT_EPS,
            center: None,
            inner: InnerOptions::default(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_eps(mut self, eps: f64) -> Result<Self> {
        self.eps = eps;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.uses_features() && self.n_features == 0 {
            return Err(Error::InvalidArgument("model needs at least one feature".into()));
        }
        match self.kind {
            LossKind::MultinomialLogistic { classes } | LossKind::DiscreteDist { categories: classes } if classes < 2 => {
                return Err(Error::InvalidArgument("need at least two classes".into()))
            }
            LossKind::GaussianCovariance { dim: 0 } => {
                return Err(Error::InvalidArgument("gaussian dimension must be positive".into()))
            }
            _ => {}
        }
        let eps_max = match self.kind {
            LossKind::BernoulliDist => 0.5,
            LossKind::DiscreteDist { categories } => 1.0 / categories as f64,
            _ => f64::INFINITY,
        };
        if !(self.eps > 0.0 && self.eps < eps_max) {
            return Err(Error::InvalidArgument(format!("domain margin eps out of range: {}", self.eps)));
        }
        if let Some(c) = &self.center {
            if c.len() != self.kind.outcome_dim() {
                return Err(Error::Shape {
                    expected: self.kind.outcome_dim(),
                    got: c.len(),
                    context: "gaussian center",
                });
            }
        }
        Ok(())
    }

    pub fn param_dim(&self) -> usize {
        match self.kind {
            LossKind::SquareRegression | LossKind::Logistic | LossKind::ExponentialRegression => self.n_features,
            LossKind::MultinomialLogistic { classes } => self.n_features * classes,
            LossKind::PoissonDist | LossKind::BernoulliDist => 1,
            LossKind::GaussianCovariance { dim } => dim * dim,
            LossKind::DiscreteDist { categories } => categories,
        }
    }

    /// Maps a raw outcome to its internal encoding, rejecting values outside
    /// the outcome domain. Logistic labels accept `{-1, 0, 1}` with `0`
    /// read as `-1`.
    pub fn ingest_outcome(&self, y: f64) -> Result<f64> {
        let bad = |what: &str| Err(Error::Data(format!("outcome {y} is not {what}")));
        if !y.is_finite() {
            return bad("finite");
        }
        let integral = y.fract() == 0.0;
        match self.kind {
            LossKind::SquareRegression | LossKind::GaussianCovariance { .. } => Ok(y),
            LossKind::Logistic => match y {
                1.0 => Ok(1.0),
                v if v == -1.0 || v == 0.0 => Ok(-1.0),
                _ => bad("a boolean label (-1/1 or 0/1)"),
            },
            LossKind::MultinomialLogistic { classes: m } | LossKind::DiscreteDist { categories: m } => {
                if integral && y >= 1.0 && y <= m as f64 {
                    Ok(y)
                } else {
                    bad(&format!("a category in 1..={m}"))
                }
            }
            LossKind::ExponentialRegression => {
                if y >= 0.0 {
                    Ok(y)
                } else {
                    bad("nonnegative")
                }
            }
            LossKind::PoissonDist => {
                if integral && y >= 0.0 {
                    Ok(y)
                } else {
                    bad("a nonnegative integer")
                }
            }
            LossKind::BernoulliDist => {
                if y == 0.0 || y == 1.0 {
                    Ok(y)
                } else {
                    bad("0 or 1")
                }
            }
        }
    }

    /// Groups already-ingested records into a node slice.
    pub fn node_data(&self, features: Vec<f64>, outcomes: Vec<f64>) -> Result<NodeData> {
        let od = self.kind.outcome_dim();
        if !outcomes.len().is_multiple_of(od) {
            return Err(Error::Shape {
                expected: od,
                got: outcomes.len() % od,
                context: "outcome length",
            });
        }
        let count = outcomes.len() / od;
        let nf = self.n_features;
        if features.len() != count * nf {
            return Err(Error::Shape {
                expected: count * nf,
                got: features.len(),
                context: "feature matrix size",
            });
        }
        for i in 0..count {
            for &y in &outcomes[i * od..(i + 1) * od] {
                if self.ingest_outcome(y)? != y {
                    return Err(Error::Data(format!("outcome {y} must be ingested before grouping")));
                }
            }
        }
        Ok(NodeData {
            n_features: nf,
            outcome_dim: od,
            features,
            outcomes,
            count,
            stats: OnceLock::new(),
        })
    }

    fn center(&self) -> Vec<f64> {
        self.center.clone().unwrap_or_else(|| vec![0.0; self.kind.outcome_dim()])
    }

    fn stats<'a>(&self, d: &'a NodeData) -> &'a Stats {
        d.stats.get_or_init(|| match self.kind {
            LossKind::SquareRegression => {
                let n = d.n_features;
                let mut gram = DMatrix::zeros(n, n);
                let mut xty = vec![0.0; n];
                for i in 0..d.count {
                    let x = d.feature_row(i);
                    let y = d.y(i);
                    for a in 0..n {
                        xty[a] += x[a] * y;
                        for b in 0..n {
                            gram[(a, b)] += x[a] * x[b];
                        }
                    }
                }
                Stats::Gram { gram, xty }
            }
            LossKind::PoissonDist | LossKind::BernoulliDist => Stats::Sum {
                total: (0..d.count).map(|i| d.y(i)).sum(),
            },
            LossKind::GaussianCovariance { dim } => {
                let mu = self.center();
                let mut s = DMatrix::zeros(dim, dim);
                for i in 0..d.count {
                    let y = d.outcome(i);
                    for a in 0..dim {
                        for b in 0..dim {
                            s[(a, b)] += (y[a] - mu[a]) * (y[b] - mu[b]);
                        }
                    }
                }
                if d.count > 0 {
                    s /= d.count as f64;
                }
                Stats::SecondMoment(s)
            }
            LossKind::DiscreteDist { categories } => {
                let mut c = vec![0.0; categories];
                for i in 0..d.count {
                    c[d.y(i) as usize - 1] += 1.0;
                }
                Stats::Counts(c)
            }
            _ => Stats::None,
        })
    }

    fn check_param(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_dim() {
            return Err(Error::Shape {
                expected: self.param_dim(),
                got: theta.len(),
                context: "parameter length",
            });
        }
        Ok(())
    }

    fn check_data(&self, d: &NodeData) -> Result<()> {
        if !d.is_empty() && (d.n_features != self.n_features || d.outcome_dim != self.kind.outcome_dim()) {
            return Err(Error::Shape {
                expected: self.n_features,
                got: d.n_features,
                context: "node data feature count",
            });
        }
        Ok(())
    }

    fn symmetric_matrix(&self, theta: &[f64]) -> DMatrix<f64> {
        let m = self.kind.outcome_dim();
        let a = DMatrix::from_row_slice(m, m, theta);
        (&a + a.transpose()) * 0.5
    }

    /// Whether `theta` lies in the closed parameter domain.
    pub fn in_domain(&self, theta: &[f64]) -> bool {
        let eps = self.eps;
        match self.kind {
            LossKind::PoissonDist => theta[0] >= eps,
            LossKind::BernoulliDist => theta[0] >= eps && theta[0] <= 1.0 - eps,
            LossKind::DiscreteDist { .. } => theta.iter().all(|&v| v >= eps),
            LossKind::GaussianCovariance { dim } => {
                let a = DMatrix::from_row_slice(dim, dim, theta);
                let scale = a.amax().max(1.0);
                if (&a - a.transpose()).amax() > 1e-9 * scale {
                    return false;
                }
                let min = SymmetricEigen::new(self.symmetric_matrix(theta)).eigenvalues.min();
                min >= eps * (1.0 - 1e-9)
            }
            _ => theta.iter().all(|v| v.is_finite()),
        }
    }

    /// Euclidean projection onto the parameter domain.
    pub fn project(&self, theta: &mut [f64]) {
        let eps = self.eps;
        match self.kind {
            LossKind::PoissonDist => theta[0] = theta[0].max(eps),
            LossKind::BernoulliDist => theta[0] = theta[0].clamp(eps, 1.0 - eps),
            LossKind::DiscreteDist { .. } => theta.iter_mut().for_each(|v| *v = v.max(eps)),
            LossKind::GaussianCovariance { dim } => {
                let eig = SymmetricEigen::new(self.symmetric_matrix(theta));
                let w = eig.eigenvalues.map(|v| v.max(eps));
                let p = &eig.eigenvectors * DMatrix::from_diagonal(&w) * eig.eigenvectors.transpose();
                for a in 0..dim {
                    for b in 0..dim {
                        theta[a * dim + b] = 0.5 * (p[(a, b)] + p[(b, a)]);
                    }
                }
            }
            _ => {}
        }
    }

    /// Linear scores `x^T theta` (one per class for multinomial).
    fn scores(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        match self.kind {
            LossKind::MultinomialLogistic { classes } => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for (f, &xf) in x.iter().enumerate() {
                    let row = &theta[f * classes..(f + 1) * classes];
                    for (o, t) in out.iter_mut().zip(row) {
                        *o += xf * t;
                    }
                }
            }
            _ => out[0] = dot(theta, x),
        }
    }

    /// `l_k(theta)`: sum of per-record losses, `+inf` outside the domain.
    pub fn eval(&self, theta: &[f64], d: &NodeData) -> Result<f64> {
        self.check_param(theta)?;
        self.check_data(d)?;
        if !self.in_domain(theta) {
            return Ok(f64::INFINITY);
        }
        if d.is_empty() {
            return Ok(0.0);
        }
        let n = d.count as f64;
        Ok(match self.kind {
            LossKind::SquareRegression => (0..d.count)
                .map(|i| 0.5 * (dot(theta, d.feature_row(i)) - d.y(i)).powi(2))
                .sum(),
            LossKind::Logistic => (0..d.count)
                .map(|i| softplus(-d.y(i) * dot(theta, d.feature_row(i))))
                .sum(),
            LossKind::MultinomialLogistic { classes } => {
                let mut s = vec![0.0; classes];
                (0..d.count)
                    .map(|i| {
                        self.scores(theta, d.feature_row(i), &mut s);
                        log_sum_exp(&s) - s[d.y(i) as usize - 1]
                    })
                    .sum()
            }
            LossKind::ExponentialRegression => (0..d.count)
                .map(|i| {
                    let s = dot(theta, d.feature_row(i));
                    -s + s.exp() * d.y(i)
                })
                .sum(),
            LossKind::PoissonDist => {
                let Stats::Sum { total } = self.stats(d) else { unreachable!() };
                n * theta[0] - total * theta[0].ln()
            }
            LossKind::BernoulliDist => {
                let Stats::Sum { total } = self.stats(d) else { unreachable!() };
                let mut v = 0.0;
                if *total > 0.0 {
                    v -= total * theta[0].ln();
                }
                if n - total > 0.0 {
                    v -= (n - total) * (1.0 - theta[0]).ln();
                }
                v
            }
            LossKind::GaussianCovariance { .. } => {
                let Stats::SecondMoment(s) = self.stats(d) else { unreachable!() };
                let a = self.symmetric_matrix(theta);
                let logdet: f64 = SymmetricEigen::new(a.clone()).eigenvalues.iter().map(|v| v.ln()).sum();
                n * ((s * &a).trace() - logdet)
            }
            LossKind::DiscreteDist { .. } => {
                let Stats::Counts(c) = self.stats(d) else { unreachable!() };
                c.iter()
                    .zip(theta)
                    .filter(|(c, _)| **c > 0.0)
                    .map(|(c, t)| -c * t.ln())
                    .sum()
            }
        })
    }

    /// Value and gradient of `l_k` for the smooth losses without closed-form prox.
    fn smooth_value_grad(&self, theta: &[f64], d: &NodeData, grad: &mut [f64], scratch: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut value = 0.0;
        for i in 0..d.count {
            let x = d.feature_row(i);
            let y = d.y(i);
            match self.kind {
                LossKind::Logistic => {
                    let m = y * dot(theta, x);
                    value += softplus(-m);
                    let c = -y * sigmoid(-m);
                    for (g, xf) in grad.iter_mut().zip(x) {
                        *g += c * xf;
                    }
                }
                LossKind::ExponentialRegression => {
                    let s = dot(theta, x);
                    let e = s.exp();
                    value += -s + e * y;
                    let c = -1.0 + e * y;
                    for (g, xf) in grad.iter_mut().zip(x) {
                        *g += c * xf;
                    }
                }
                LossKind::MultinomialLogistic { classes } => {
                    self.scores(theta, x, scratch);
                    let lse = log_sum_exp(scratch);
                    let label = y as usize - 1;
                    value += lse - scratch[label];
                    for c in 0..classes {
                        let w = (scratch[c] - lse).exp() - if c == label { 1.0 } else { 0.0 };
                        for (f, xf) in x.iter().enumerate() {
                            grad[f * classes + c] += w * xf;
                        }
                    }
                }
                _ => unreachable!("closed-form losses do not use the smooth path"),
            }
        }
        value
    }

    /// `prox_{t l_k}(v) = argmin_{theta in domain} t l_k(theta) + (1/2)||theta - v||^2`.
    ///
    /// `warm` seeds the iterative solve used by the logistic, multinomial
    /// and exponential losses; closed forms ignore it.
    pub fn prox(&self, v: &[f64], t: f64, d: &NodeData, warm: Option<&[f64]>) -> Result<ProxOutcome> {
        self.check_param(v)?;
        self.check_data(d)?;
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::InvalidArgument(format!("prox step must be positive, got {t}")));
        }
        if d.is_empty() {
            let mut theta = v.to_vec();
            self.project(&mut theta);
            return Ok(ProxOutcome::exact(theta));
        }
        let n = d.count as f64;
        let eps = self.eps;
        let theta = match self.kind {
            LossKind::SquareRegression => {
                let Stats::Gram { gram, xty } = self.stats(d) else { unreachable!() };
                prox::quadratic(gram, xty, v, t)
            }
            LossKind::PoissonDist => {
                let Stats::Sum { total } = self.stats(d) else { unreachable!() };
                vec![prox::poisson(v[0], t, n, *total).max(eps)]
            }
            LossKind::BernoulliDist => {
                let Stats::Sum { total } = self.stats(d) else { unreachable!() };
                vec![prox::bernoulli(v[0], t, n, *total, eps)]
            }
            LossKind::GaussianCovariance { dim } => {
                let Stats::SecondMoment(s) = self.stats(d) else { unreachable!() };
                prox::covariance(s, &DMatrix::from_row_slice(dim, dim, v), t * n, eps)
            }
            LossKind::DiscreteDist { .. } => {
                let Stats::Counts(c) = self.stats(d) else { unreachable!() };
                v.iter()
                    .zip(c)
                    .map(|(&vm, &cm)| prox::neg_log(vm, t * cm).max(eps))
                    .collect()
            }
            LossKind::Logistic | LossKind::ExponentialRegression | LossKind::MultinomialLogistic { .. } => {
                return Ok(self.smooth_prox(v, t, d, warm));
            }
        };
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data(format!("proximal step produced a non-finite value at v = {v:?}")));
        }
        Ok(ProxOutcome::exact(theta))
    }

    fn smooth_prox(&self, v: &[f64], t: f64, d: &NodeData, warm: Option<&[f64]>) -> ProxOutcome {
        let classes = match self.kind {
            LossKind::MultinomialLogistic { classes } => classes,
            _ => 1,
        };
        let mut scratch = vec![0.0; classes];
        let vnorm = dot(v, v).sqrt();
        let settings = LbfgsSettings {
            grad_tol: self.inner.tol * vnorm.max(1.0),
            max_iter: self.inner.max_iter,
            memory: self.inner.memory,
        };
        let x0 = warm.filter(|w| w.len() == v.len()).unwrap_or(v).to_vec();
        let res = lbfgs::minimize(
            |theta, grad| {
                let value = self.smooth_value_grad(theta, d, grad, &mut scratch);
                let mut prox_term = 0.0;
                for ((g, th), vi) in grad.iter_mut().zip(theta).zip(v) {
                    *g = t * *g + (th - vi);
                    prox_term += (th - vi) * (th - vi);
                }
                t * value + 0.5 * prox_term
            },
            x0,
            &settings,
        );
        ProxOutcome {
            theta: res.x,
            converged: res.converged,
            iterations: res.iterations,
            grad_norm: res.grad_norm,
        }
    }

    pub fn predict(&self, theta: &[f64], x: Option<&[f64]>) -> Result<Prediction> {
        self.check_param(theta)?;
        let x = if self.kind.uses_features() {
            let x = x.ok_or_else(|| Error::Data("model needs features for prediction".into()))?;
            if x.len() != self.n_features {
                return Err(Error::Shape {
                    expected: self.n_features,
                    got: x.len(),
                    context: "feature vector",
                });
            }
            x
        } else {
            &[][..]
        };
        Ok(match self.kind {
            LossKind::SquareRegression => Prediction::Value(dot(theta, x)),
            LossKind::Logistic => {
                let s = dot(theta, x);
                Prediction::Label {
                    label: if s >= 0.0 { 1.0 } else { -1.0 },
                    prob_positive: sigmoid(s),
                }
            }
            LossKind::MultinomialLogistic { classes } => {
                let mut s = vec![0.0; classes];
                self.scores(theta, x, &mut s);
                let lse = log_sum_exp(&s);
                let probs: Vec<f64> = s.iter().map(|v| (v - lse).exp()).collect();
                Prediction::Class {
                    class: argmax(&s) + 1,
                    probs,
                }
            }
            LossKind::ExponentialRegression => Prediction::Exponential {
                rate: dot(theta, x).exp(),
            },
            LossKind::PoissonDist => Prediction::Poisson { rate: theta[0] },
            LossKind::BernoulliDist => Prediction::Bernoulli { p: theta[0] },
            LossKind::GaussianCovariance { .. } => Prediction::Gaussian {
                mean: self.center(),
                precision: theta.to_vec(),
            },
            LossKind::DiscreteDist { .. } => {
                let total: f64 = theta.iter().sum();
                Prediction::Discrete {
                    mode: argmax(theta) + 1,
                    probs: theta.iter().map(|v| v / total).collect(),
                }
            }
        })
    }

    /// Column names matching [`Prediction::values`].
    pub fn prediction_columns(&self) -> Vec<String> {
        match self.kind {
            LossKind::SquareRegression => vec!["prediction".into()],
            LossKind::Logistic => vec!["label".into(), "prob_positive".into()],
            LossKind::MultinomialLogistic { classes: m } | LossKind::DiscreteDist { categories: m } => {
                let head = if matches!(self.kind, LossKind::DiscreteDist { .. }) { "mode" } else { "class" };
                std::iter::once(head.to_string())
                    .chain((1..=m).map(|c| format!("prob:{c}")))
                    .collect()
            }
            LossKind::ExponentialRegression => vec!["rate".into(), "mean".into()],
            LossKind::PoissonDist => vec!["rate".into()],
            LossKind::BernoulliDist => vec!["p".into()],
            LossKind::GaussianCovariance { dim } => (0..dim)
                .flat_map(|a| (0..dim).map(move |b| format!("precision:{a}:{b}")))
                .collect(),
        }
    }

    /// Negative log-likelihood of one record under the model at `theta`.
    pub fn record_nll(&self, theta: &[f64], x: &[f64], y: &[f64]) -> Result<f64> {
        let y0 = y[0];
        Ok(match self.kind {
            LossKind::SquareRegression => {
                return Err(Error::Unsupported("anll is not defined for square regression; use rmse".into()))
            }
            LossKind::Logistic => softplus(-y0 * dot(theta, x)),
            LossKind::MultinomialLogistic { classes } => {
                let mut s = vec![0.0; classes];
                self.scores(theta, x, &mut s);
                log_sum_exp(&s) - s[y0 as usize - 1]
            }
            LossKind::ExponentialRegression => {
                let s = dot(theta, x);
                -s + s.exp() * y0
            }
            LossKind::PoissonDist => {
                let rate = theta[0];
                let log_term = if y0 > 0.0 { y0 * rate.ln() } else { 0.0 };
                rate - log_term + ln_gamma(y0 + 1.0)
            }
            LossKind::BernoulliDist => {
                if y0 == 1.0 {
                    -theta[0].ln()
                } else {
                    -(1.0 - theta[0]).ln()
                }
            }
            LossKind::GaussianCovariance { dim } => {
                let a = self.symmetric_matrix(theta);
                let logdet: f64 = SymmetricEigen::new(a.clone()).eigenvalues.iter().map(|v| v.ln()).sum();
                let mu = self.center();
                let r: Vec<f64> = y.iter().zip(&mu).map(|(a, b)| a - b).collect();
                let mut quad = 0.0;
                for i in 0..dim {
                    for j in 0..dim {
                        quad += r[i] * a[(i, j)] * r[j];
                    }
                }
                0.5 * (dim as f64 * (2.0 * std::f64::consts::PI).ln() - logdet + quad)
            }
            LossKind::DiscreteDist { .. } => {
                let total: f64 = theta.iter().sum();
                -(theta[y0 as usize - 1] / total).ln()
            }
        })
    }

    fn record_metric(&self, metric: Metric, theta: &[f64], d: &NodeData, i: usize) -> Result<f64> {
        let x = d.feature_row(i);
        let y = d.outcome(i);
        match metric {
            Metric::Anll => self.record_nll(theta, x, y),
            Metric::Rmse => {
                let p = self.predict(theta, self.kind.uses_features().then_some(x))?;
                match (p, self.kind) {
                    (Prediction::Class { .. } | Prediction::Discrete { .. } | Prediction::Label { .. }, _)
                    | (_, LossKind::GaussianCovariance { .. }) => {
                        Err(Error::Unsupported(format!("rmse is not defined for {:?}", self.kind)))
                    }
                    (p, _) => Ok((p.point().unwrap_or(f64::NAN) - y[0]).powi(2)),
                }
            }
            Metric::Error => {
                let p = self.predict(theta, self.kind.uses_features().then_some(x))?;
                let predicted = match p {
                    Prediction::Label { label, .. } => label,
                    Prediction::Class { class, .. } | Prediction::Discrete { mode: class, .. } => class as f64,
                    Prediction::Bernoulli { p } => {
                        if p >= 0.5 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    _ => return Err(Error::Unsupported(format!("error rate is not defined for {:?}", self.kind))),
                };
                Ok(if predicted == y[0] { 0.0 } else { 1.0 })
            }
        }
    }

    /// Mean per-record metric over grouped data, with `params.row(k)` used
    /// for the records in `groups[k]`.
    pub fn score(&self, metric: Metric, params: &ParamBlock, groups: &[NodeData]) -> Result<f64> {
        if params.rows() != groups.len() {
            return Err(Error::Shape {
                expected: params.rows(),
                got: groups.len(),
                context: "node groups",
            });
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for (k, d) in groups.iter().enumerate() {
            let theta = params.row(k);
            for i in 0..d.count {
                total += self.record_metric(metric, theta, d, i)?;
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::Data("cannot score an empty dataset".into()));
        }
        let mean = total / count as f64;
        Ok(if metric == Metric::Rmse { mean.sqrt() } else { mean })
    }

    pub fn score_anll(&self, params: &ParamBlock, groups: &[NodeData]) -> Result<f64> {
        self.score(Metric::Anll, params, groups)
    }

    pub fn score_rmse(&self, params: &ParamBlock, groups: &[NodeData]) -> Result<f64> {
        self.score(Metric::Rmse, params, groups)
    }

    pub fn score_error_rate(&self, params: &ParamBlock, groups: &[NodeData]) -> Result<f64> {
        self.score(Metric::Error, params, groups)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
