//! Local regularizers `r` and their proximal operators.
//!
//! A regularizer is a penalty (zero, sum of squares, l1, or elastic net)
//! restricted to a constraint set. Optionally one designated coordinate,
//! the intercept, is left unpenalized and unconstrained.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Penalty {
    Zero,
    /// `(gamma / 2) ||theta||^2`
    SumSquares(f64),
    /// `gamma ||theta||_1`
    L1(f64),
    /// `l1 ||theta||_1 + (l2 / 2) ||theta||^2`
    Elastic { l1: f64, l2: f64 },
    /// `gamma ||theta||_2`, not squared; only combines with the full space
    /// or the nonnegative orthant.
    L2Norm(f64),
}

impl Penalty {
    fn weights(self) -> (f64, f64) {
        match self {
            Penalty::Zero => (0.0, 0.0),
            Penalty::SumSquares(g) => (0.0, g),
            Penalty::L1(g) => (g, 0.0),
            Penalty::Elastic { l1, l2 } => (l1, l2),
            Penalty::L2Norm(_) => (0.0, 0.0),
        }
    }

    fn norm_weight(self) -> f64 {
        match self {
            Penalty::L2Norm(g) => g,
            _ => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintSet {
    #[serde(alias = "full-space")]
    FullSpace,
    #[serde(alias = "nonneg", alias = "nonnegative-orthant")]
    NonnegativeOrthant,
    Box { lo: f64, hi: f64 },
    #[serde(alias = "simplex", alias = "probability-simplex")]
    ProbabilitySimplex,
}

impl ConstraintSet {
    pub fn contains(&self, v: f64) -> bool {
        match *self {
            ConstraintSet::FullSpace | ConstraintSet::ProbabilitySimplex => true,
            ConstraintSet::NonnegativeOrthant => v >= 0.0,
            ConstraintSet::Box { lo, hi } => (lo..=hi).contains(&v),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RegularizerSpec", into = "RegularizerSpec")]
pub struct Regularizer {
    pub penalty: Penalty,
    pub set: ConstraintSet,
    pub skip_intercept: bool,
    pub intercept_index: usize,
}

impl Default for Regularizer {
    fn default() -> Self {
        Regularizer::zero()
    }
}

/// Tolerance used to decide simplex membership in [`Regularizer::eval`].
const SIMPLEX_TOL: f64 = 1e-9;

impl Regularizer {
    pub fn zero() -> Self {
        Regularizer {
            penalty: Penalty::Zero,
            set: ConstraintSet::FullSpace,
            skip_intercept: false,
            intercept_index: 0,
        }
    }

    pub fn sum_squares(gamma: f64) -> Self {
        Regularizer {
            penalty: Penalty::SumSquares(gamma),
            ..Regularizer::zero()
        }
    }

    pub fn l1(gamma: f64) -> Self {
        Regularizer {
            penalty: Penalty::L1(gamma),
            ..Regularizer::zero()
        }
    }

    pub fn l2_norm(gamma: f64) -> Self {
        Regularizer {
            penalty: Penalty::L2Norm(gamma),
            ..Regularizer::zero()
        }
    }

    pub fn elastic(l1: f64, l2: f64) -> Self {
        Regularizer {
            penalty: Penalty::Elastic { l1, l2 },
            ..Regularizer::zero()
        }
    }

    pub fn indicator(set: ConstraintSet) -> Self {
        Regularizer {
            set,
            ..Regularizer::zero()
        }
    }

    pub fn with_set(mut self, set: ConstraintSet) -> Self {
        self.set = set;
        self
    }

    pub fn skipping_intercept(mut self, index: usize) -> Self {
        self.skip_intercept = true;
        self.intercept_index = index;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.penalty.weights();
        let c = self.penalty.norm_weight();
        if !(a >= 0.0 && b >= 0.0 && c >= 0.0 && a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "regularization weights must be finite and nonnegative, got {:?}",
                self.penalty
            )));
        }
        if matches!(self.penalty, Penalty::L2Norm(_))
            && !matches!(self.set, ConstraintSet::FullSpace | ConstraintSet::NonnegativeOrthant)
        {
            return Err(Error::InvalidArgument(
                "the l2 norm penalty only combines with the full space or the nonnegative orthant".into(),
            ));
        }
        if let ConstraintSet::Box { lo, hi } = self.set {
            if !(lo < hi) {
                return Err(Error::InvalidArgument(format!("box requires lo < hi, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Copy with penalty weights multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let penalty = match self.penalty {
            Penalty::Zero => Penalty::Zero,
            Penalty::SumSquares(g) => Penalty::SumSquares(g * factor),
            Penalty::L1(g) => Penalty::L1(g * factor),
            Penalty::L2Norm(g) => Penalty::L2Norm(g * factor),
            Penalty::Elastic { l1, l2 } => Penalty::Elastic {
                l1: l1 * factor,
                l2: l2 * factor,
            },
        };
        Regularizer {
            penalty,
            ..self.clone()
        }
    }

    fn is_free(&self, i: usize) -> bool {
        self.skip_intercept && i == self.intercept_index
    }

    /// `r(theta)`, `+inf` outside the constraint set.
    pub fn eval(&self, theta: &[f64]) -> f64 {
        let (l1, l2) = self.penalty.weights();
        let mut value = 0.0;
        let mut mass = 0.0;
        let mut sq = 0.0;
        for (i, &v) in theta.iter().enumerate() {
            if self.is_free(i) {
                continue;
            }
            let inside = match self.set {
                ConstraintSet::ProbabilitySimplex => v >= -SIMPLEX_TOL,
                ref s => s.contains(v),
            };
            if !inside {
                return f64::INFINITY;
            }
            mass += v;
            sq += v * v;
            value += l1 * v.abs() + 0.5 * l2 * v * v;
        }
        value += self.penalty.norm_weight() * sq.sqrt();
        if self.set == ConstraintSet::ProbabilitySimplex && (mass - 1.0).abs() > SIMPLEX_TOL * theta.len().max(1) as f64 {
            return f64::INFINITY;
        }
        value
    }

    /// `argmin_theta t r(theta) + (1/2) ||theta - v||^2`.
    pub fn prox(&self, v: &[f64], t: f64) -> Vec<f64> {
        let mut out = v.to_vec();
        self.prox_into(v, t, &mut out);
        out
    }

    pub fn prox_into(&self, v: &[f64], t: f64, out: &mut [f64]) {
        debug_assert_eq!(v.len(), out.len());
        let (l1, l2) = self.penalty.weights();
        let shrink = 1.0 / (1.0 + l2 * t);
        if let Penalty::L2Norm(g) = self.penalty {
            // projecting onto the orthant first is exact for the orthant
            out.copy_from_slice(v);
            let mut sq = 0.0;
            for (i, o) in out.iter_mut().enumerate() {
                if self.is_free(i) {
                    continue;
                }
                if self.set == ConstraintSet::NonnegativeOrthant {
                    *o = o.max(0.0);
                }
                sq += *o * *o;
            }
            let norm = sq.sqrt();
            let factor = if norm > g * t { 1.0 - g * t / norm } else { 0.0 };
            for (i, o) in out.iter_mut().enumerate() {
                if !self.is_free(i) {
                    *o *= factor;
                }
            }
            return;
        }
        match self.set {
            ConstraintSet::ProbabilitySimplex => {
                // The l1 term is constant on the simplex; the quadratic term
                // only rescales the point being projected.
                let idx: Vec<usize> = (0..v.len()).filter(|&i| !self.is_free(i)).collect();
                let scaled: Vec<f64> = idx.iter().map(|&i| v[i] * shrink).collect();
                let proj = project_simplex(&scaled);
                out.copy_from_slice(v);
                for (&i, p) in idx.iter().zip(proj) {
                    out[i] = p;
                }
            }
            set => {
                for (i, (o, &vi)) in out.iter_mut().zip(v).enumerate() {
                    if self.is_free(i) {
                        *o = vi;
                        continue;
                    }
                    let p = shrink * soft_threshold(vi, l1 * t);
                    *o = match set {
                        ConstraintSet::NonnegativeOrthant => p.max(0.0),
                        ConstraintSet::Box { lo, hi } => p.clamp(lo, hi),
                        _ => p,
                    };
                }
            }
        }
    }
}

/// `(v - k)_+ - (-v - k)_+`
pub fn soft_threshold(v: f64, k: f64) -> f64 {
    if v > k {
        v - k
    } else if v < -k {
        v + k
    } else {
        0.0
    }
}

/// Euclidean projection onto `{x >= 0, sum x = 1}` by sorting.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let candidate = (cumsum - 1.0) / (i + 1) as f64;
        if s - candidate > 0.0 {
            tau = candidate;
        }
    }
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

/// Flat JSON form: `{"kind":"elastic","l1":0.1,"l2":1.0,"skip_intercept":true}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set: Option<ConstraintSet>,
    #[serde(default)]
    pub skip_intercept: bool,
    #[serde(default)]
    pub intercept_index: usize,
}

impl TryFrom<RegularizerSpec> for Regularizer {
    type Error = Error;

    fn try_from(s: RegularizerSpec) -> Result<Self> {
        let weight = |primary: Option<f64>, alt: Option<f64>, name: &str| {
            primary
                .or(alt)
                .ok_or_else(|| Error::InvalidArgument(format!("regularizer '{}' needs '{name}'", s.kind)))
        };
        let penalty = match s.kind.replace('-', "_").as_str() {
            "zero" | "indicator" => Penalty::Zero,
            "sum_squares" => Penalty::SumSquares(weight(s.gamma, s.l2, "gamma")?),
            "l1" => Penalty::L1(weight(s.gamma, s.l1, "gamma")?),
            "l2_norm" | "l2" => Penalty::L2Norm(weight(s.gamma, None, "gamma")?),
            "elastic" => Penalty::Elastic {
                l1: weight(s.l1, None, "l1")?,
                l2: weight(s.l2, None, "l2")?,
            },
            other => return Err(Error::InvalidArgument(format!("unknown regularizer kind '{other}'"))),
        };
        let r = Regularizer {
            penalty,
            set: s.set.unwrap_or(ConstraintSet::FullSpace),
            skip_intercept: s.skip_intercept,
            intercept_index: s.intercept_index,
        };
        r.validate()?;
        Ok(r)
    }
}

impl From<Regularizer> for RegularizerSpec {
    fn from(r: Regularizer) -> Self {
        let (kind, gamma, l1, l2) = match r.penalty {
            Penalty::Zero if r.set == ConstraintSet::FullSpace => ("zero", None, None, None),
            Penalty::Zero => ("indicator", None, None, None),
            Penalty::SumSquares(g) => ("sum_squares", Some(g), None, None),
            Penalty::L1(g) => ("l1", Some(g), None, None),
            Penalty::L2Norm(g) => ("l2_norm", Some(g), None, None),
            Penalty::Elastic { l1, l2 } => ("elastic", None, Some(l1), Some(l2)),
        };
        RegularizerSpec {
            kind: kind.into(),
            gamma,
            l1,
            l2,
            set: (r.set != ConstraintSet::FullSpace).then_some(r.set),
            skip_intercept: r.skip_intercept,
            intercept_index: r.intercept_index,
        }
    }
}
