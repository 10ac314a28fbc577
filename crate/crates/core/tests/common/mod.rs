//! Independent reference solvers shared by the integration tests.
//!
//! Nothing here calls the library's proximal operators; losses and
//! regularizers are re-implemented from their definitions and minimized with
//! generic numeric methods.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stratfit::losses::{LossKind, LossModel};
use stratfit::regularizers::{ConstraintSet, Penalty, Regularizer};
use stratfit::NodeData;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Root of a nondecreasing function on `[lo, hi]`, or the endpoint when
/// the sign does not change.
pub fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    if g(lo) >= 0.0 {
        return lo;
    }
    if g(hi) <= 0.0 {
        return hi;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Damped Newton with a finite-difference Hessian of the analytic gradient.
/// `fg` returns `+inf` outside the domain.
pub fn newton(fg: &dyn Fn(&[f64], &mut [f64]) -> f64, x0: &[f64]) -> Vec<f64> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = fg(&x, &mut g);
    assert!(fx.is_finite(), "newton start outside domain");
    let mut gp = vec![0.0; n];
    let mut gm = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut gt = vec![0.0; n];
    for _ in 0..500 {
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm <= 1e-13 * (1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
            break;
        }
        let mut h = DMatrix::zeros(n, n);
        for j in 0..n {
            let step = 1e-6 * (1.0 + x[j].abs());
            let mut xp = x.clone();
            xp[j] += step;
            let mut xm = x.clone();
            xm[j] -= step;
            let fp = fg(&xp, &mut gp);
            let fm = fg(&xm, &mut gm);
            if !(fp.is_finite() && fm.is_finite()) {
                h[(j, j)] = 1.0;
                continue;
            }
            for i in 0..n {
                h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
            }
        }
        let hs = (&h + h.transpose()) * 0.5;
        let rhs = -DVector::from_column_slice(&g);
        let d = match hs.clone().cholesky() {
            Some(c) => c.solve(&rhs),
            None => rhs.clone(),
        };
        let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..80 {
            for i in 0..n {
                trial[i] = x[i] + t * d[i];
            }
            let ft = fg(&trial, &mut gt);
            let gtn = gt.iter().map(|v| v * v).sum::<f64>().sqrt();
            if ft.is_finite() && (ft <= fx + 1e-4 * t * slope || gtn < 0.5 * gnorm) {
                x.copy_from_slice(&trial);
                g.copy_from_slice(&gt);
                fx = ft;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    x
}

// ---------------------------------------------------------------- losses

/// Records of one node, kept in raw form for the reference formulas.
#[derive(Clone, Debug)]
pub struct Records {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<Vec<f64>>,
}

impl Records {
    pub fn node_data(&self, model: &LossModel) -> NodeData {
        let features: Vec<f64> = if model.kind.uses_features() {
            self.xs.iter().flatten().copied().collect()
        } else {
            Vec::new()
        };
        let outcomes: Vec<f64> = self.ys.iter().flatten().copied().collect();
        model.node_data(features, outcomes).unwrap()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Reference node loss and gradient, `+inf` outside the domain.
pub fn loss_value_grad(model: &LossModel, recs: &Records, theta: &[f64], grad: &mut [f64]) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let eps = model.eps;
    let mut total = 0.0;
    match model.kind {
        LossKind::SquareRegression => {
            for (x, y) in recs.xs.iter().zip(&recs.ys) {
                let r = dot(x, theta) - y[0];
                total += 0.5 * r * r;
                for (g, xi) in grad.iter_mut().zip(x) {
                    *g += r * xi;
                }
            }
        }
        LossKind::Logistic => {
            for (x, y) in recs.xs.iter().zip(&recs.ys) {
                let m = -y[0] * dot(x, theta);
                total += if m > 0.0 { m + (-m).exp().ln_1p() } else { m.exp().ln_1p() };
                let s = 1.0 / (1.0 + (-m).exp());
                for (g, xi) in grad.iter_mut().zip(x) {
                    *g += -y[0] * xi * s;
                }
            }
        }
        LossKind::MultinomialLogistic { classes } => {
            for (x, y) in recs.xs.iter().zip(&recs.ys) {
                let scores: Vec<f64> = (0..classes)
                    .map(|c| x.iter().enumerate().map(|(f, xf)| xf * theta[f * classes + c]).sum())
                    .collect();
                let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                let label = y[0] as usize - 1;
                total += m + z.ln() - scores[label];
                for c in 0..classes {
                    let p = (scores[c] - m).exp() / z - if c == label { 1.0 } else { 0.0 };
                    for (f, xf) in x.iter().enumerate() {
                        grad[f * classes + c] += xf * p;
                    }
                }
            }
        }
        LossKind::ExponentialRegression => {
            for (x, y) in recs.xs.iter().zip(&recs.ys) {
                let s = dot(x, theta);
                total += -s + s.exp() * y[0];
                for (g, xi) in grad.iter_mut().zip(x) {
                    *g += xi * (-1.0 + s.exp() * y[0]);
                }
            }
        }
        LossKind::PoissonDist => {
            let th = theta[0];
            if th < eps {
                return f64::INFINITY;
            }
            for y in &recs.ys {
                total += th - y[0] * th.ln();
                grad[0] += 1.0 - y[0] / th;
            }
        }
        LossKind::BernoulliDist => {
            let th = theta[0];
            if th < eps || th > 1.0 - eps {
                return f64::INFINITY;
            }
            for y in &recs.ys {
                if y[0] == 1.0 {
                    total -= th.ln();
                    grad[0] -= 1.0 / th;
                } else {
                    total -= (1.0 - th).ln();
                    grad[0] += 1.0 / (1.0 - th);
                }
            }
        }
        LossKind::DiscreteDist { .. } => {
            if theta.iter().any(|&t| t < eps) {
                return f64::INFINITY;
            }
            for y in &recs.ys {
                let c = y[0] as usize - 1;
                total -= theta[c].ln();
                grad[c] -= 1.0 / theta[c];
            }
        }
        LossKind::GaussianCovariance { dim } => {
            let a = DMatrix::from_row_slice(dim, dim, theta);
            let a = (&a + a.transpose()) * 0.5;
            let eig = a.clone().symmetric_eigen();
            if eig.eigenvalues.min() < eps {
                return f64::INFINITY;
            }
            let logdet: f64 = eig.eigenvalues.iter().map(|v| v.ln()).sum();
            let inv = a.try_inverse().unwrap();
            let mu = model.center.clone().unwrap_or(vec![0.0; dim]);
            for y in &recs.ys {
                let r: Vec<f64> = y.iter().zip(&mu).map(|(a, b)| a - b).collect();
                let mut q = 0.0;
                for i in 0..dim {
                    for j in 0..dim {
                        q += r[i] * theta[i * dim + j] * r[j];
                        grad[i * dim + j] += r[i] * r[j] - inv[(i, j)];
                    }
                }
                total += q - logdet;
            }
        }
    }
    total
}

/// Reference `prox_{t l}(v)` for a loss.
pub fn loss_prox_oracle(model: &LossModel, recs: &Records, v: &[f64], t: f64) -> Vec<f64> {
    let eps = model.eps;
    let n_rec = recs.ys.len() as f64;
    match model.kind {
        LossKind::PoissonDist => {
            let s: f64 = recs.ys.iter().map(|y| y[0]).sum();
            let hi = v[0].abs() + t * s + 10.0;
            vec![bisect(|th| t * (n_rec - s / th) + th - v[0], eps, hi)]
        }
        LossKind::BernoulliDist => {
            let s: f64 = recs.ys.iter().map(|y| y[0]).sum();
            vec![bisect(
                |th| t * (-s / th + (n_rec - s) / (1.0 - th)) + th - v[0],
                eps,
                1.0 - eps,
            )]
        }
        LossKind::DiscreteDist { categories } => (0..categories)
            .map(|c| {
                let cnt = recs.ys.iter().filter(|y| y[0] as usize == c + 1).count() as f64;
                let hi = v[c].abs() + t * cnt + 10.0;
                bisect(|th| -t * cnt / th + th - v[c], eps, hi)
            })
            .collect(),
        LossKind::GaussianCovariance { dim } => gaussian_oracle(model, recs, v, t, dim),
        _ => {
            let obj = |th: &[f64], g: &mut [f64]| {
                let f = loss_value_grad(model, recs, th, g);
                for i in 0..th.len() {
                    g[i] = t * g[i] + th[i] - v[i];
                }
                t * f + 0.5 * th.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            };
            newton(&obj, v)
        }
    }
}

/// Minimizes over symmetric matrices parametrized by their upper triangle.
fn gaussian_oracle(model: &LossModel, recs: &Records, v: &[f64], t: f64, m: usize) -> Vec<f64> {
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i..m).map(move |j| (i, j))).collect();
    let full = |p: &[f64]| {
        let mut th = vec![0.0; m * m];
        for (&(i, j), &val) in pairs.iter().zip(p) {
            th[i * m + j] = val;
            th[j * m + i] = val;
        }
        th
    };
    let vsym: Vec<f64> = (0..m * m)
        .map(|idx| {
            let (i, j) = (idx / m, idx % m);
            0.5 * (v[i * m + j] + v[j * m + i])
        })
        .collect();
    let obj = |p: &[f64], g: &mut [f64]| {
        let th = full(p);
        let mut gf = vec![0.0; m * m];
        let f = loss_value_grad(model, recs, &th, &mut gf);
        if !f.is_finite() {
            return f64::INFINITY;
        }
        let mut prox_term = 0.0;
        for idx in 0..m * m {
            let d = th[idx] - vsym[idx];
            prox_term += 0.5 * d * d;
            gf[idx] = t * gf[idx] + d;
        }
        for (k, &(i, j)) in pairs.iter().enumerate() {
            g[k] = if i == j { gf[i * m + j] } else { gf[i * m + j] + gf[j * m + i] };
        }
        t * f + prox_term
    };
    let mut x0 = vec![0.0; pairs.len()];
    for (k, &(i, j)) in pairs.iter().enumerate() {
        if i == j {
            x0[k] = 1.0;
        }
    }
    full(&newton(&obj, &x0))
}

/// Random loss instance: model, node records, prox point and step.
pub struct LossInstance {
    pub model: LossModel,
    pub recs: Records,
    pub v: Vec<f64>,
    pub t: f64,
}

pub const LOSS_NAMES: [&str; 8] = [
    "square",
    "logistic",
    "multinomial",
    "exponential",
    "poisson",
    "bernoulli",
    "gaussian",
    "discrete",
];

pub fn loss_instance(which: usize, rng: &mut ChaCha8Rng) -> LossInstance {
    let n = rng.random_range(1..=4);
    // a data-free Gaussian node is a projection onto a matrix cone, which an
    // unconstrained Newton reference cannot resolve; it is tested separately
    let min_count = if which == 6 { 1 } else { 0 };
    let count = rng.random_range(min_count..=8);
    let t: f64 = 10f64.powf(rng.random_range(-1.5..0.7));
    let kind = match which {
        0 => LossKind::SquareRegression,
        1 => LossKind::Logistic,
        2 => LossKind::MultinomialLogistic {
            classes: rng.random_range(2..=3),
        },
        3 => LossKind::ExponentialRegression,
        4 => LossKind::PoissonDist,
        5 => LossKind::BernoulliDist,
        6 => LossKind::GaussianCovariance {
            dim: rng.random_range(1..=3),
        },
        _ => LossKind::DiscreteDist {
            categories: rng.random_range(2..=5),
        },
    };
    let model = LossModel::new(kind, n).unwrap().with_eps(1e-6).unwrap();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..count {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = match kind {
            LossKind::SquareRegression => vec![rng.random_range(-3.0..3.0)],
            LossKind::Logistic => vec![if rng.random_bool(0.5) { 1.0 } else { -1.0 }],
            LossKind::MultinomialLogistic { classes } => vec![rng.random_range(1..=classes) as f64],
            LossKind::ExponentialRegression => vec![rng.random_range(0.0..3.0)],
            LossKind::PoissonDist => vec![rng.random_range(0..6) as f64],
            LossKind::BernoulliDist => vec![if rng.random_bool(0.6) { 1.0 } else { 0.0 }],
            LossKind::GaussianCovariance { dim } => (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
            LossKind::DiscreteDist { categories } => vec![rng.random_range(1..=categories) as f64],
        };
        xs.push(x);
        ys.push(y);
    }
    let v: Vec<f64> = (0..model.param_dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
    LossInstance {
        model,
        recs: Records { xs, ys },
        v,
        t,
    }
}

// ---------------------------------------------------------- regularizers

/// Reference `t r(theta) + (1/2)||theta - v||^2`, `+inf` outside the set.
/// The simplex is handled separately.
pub fn reg_objective(reg: &Regularizer, theta: &[f64], v: &[f64], t: f64) -> f64 {
    let free = |i: usize| reg.skip_intercept && i == reg.intercept_index;
    let mut pen = 0.0;
    let mut sq = 0.0;
    for (i, &x) in theta.iter().enumerate() {
        if free(i) {
            continue;
        }
        let ok = match reg.set {
            ConstraintSet::NonnegativeOrthant => x >= 0.0,
            ConstraintSet::Box { lo, hi } => x >= lo && x <= hi,
            _ => true,
        };
        if !ok {
            return f64::INFINITY;
        }
        sq += x * x;
        pen += match reg.penalty {
            Penalty::Zero | Penalty::L2Norm(_) => 0.0,
            Penalty::SumSquares(g) => 0.5 * g * x * x,
            Penalty::L1(g) => g * x.abs(),
            Penalty::Elastic { l1, l2 } => l1 * x.abs() + 0.5 * l2 * x * x,
        };
    }
    if let Penalty::L2Norm(g) = reg.penalty {
        pen += g * sq.sqrt();
    }
    t * pen + 0.5 * theta.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
}

/// Right derivative in coordinate `i` of the objective of [`reg_objective`]
/// (ignoring the set, which the caller enforces through the search interval).
pub fn reg_right_derivative(reg: &Regularizer, theta: &[f64], i: usize, v: &[f64], t: f64) -> f64 {
    let x = theta[i];
    let base = x - v[i];
    if reg.skip_intercept && i == reg.intercept_index {
        return base;
    }
    let sign_right = if x >= 0.0 { 1.0 } else { -1.0 };
    let pen = match reg.penalty {
        Penalty::Zero => 0.0,
        Penalty::SumSquares(g) => g * x,
        Penalty::L1(g) => g * sign_right,
        Penalty::Elastic { l1, l2 } => l1 * sign_right + l2 * x,
        Penalty::L2Norm(g) => {
            let norm = theta
                .iter()
                .enumerate()
                .filter(|&(j, _)| !(reg.skip_intercept && j == reg.intercept_index))
                .map(|(_, y)| y * y)
                .sum::<f64>()
                .sqrt();
            if norm == 0.0 {
                g
            } else {
                g * x / norm
            }
        }
    };
    t * pen + base
}

/// Reference regularizer prox: brute-force active sets on the simplex,
/// cyclic exact coordinate minimization (bisection on the right
/// derivative) elsewhere.
pub fn reg_prox_oracle(reg: &Regularizer, v: &[f64], t: f64) -> Vec<f64> {
    let n = v.len();
    let free = |i: usize| reg.skip_intercept && i == reg.intercept_index;
    if reg.set == ConstraintSet::ProbabilitySimplex {
        let q = match reg.penalty {
            Penalty::SumSquares(g) => g,
            Penalty::Elastic { l2, .. } => l2,
            _ => 0.0,
        };
        let a = 1.0 + t * q;
        let idx: Vec<usize> = (0..n).filter(|&i| !free(i)).collect();
        let m = idx.len();
        if m == 0 {
            return v.to_vec();
        }
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 1u32..(1 << m) {
            let on: Vec<usize> = (0..m).filter(|b| mask & (1 << b) != 0).collect();
            let sv: f64 = on.iter().map(|&b| v[idx[b]]).sum();
            let nu = (a - sv) / on.len() as f64;
            let mut th = v.to_vec();
            for &i in &idx {
                th[i] = 0.0;
            }
            let mut feasible = true;
            for &b in &on {
                let val = (v[idx[b]] + nu) / a;
                if val < -1e-15 {
                    feasible = false;
                }
                th[idx[b]] = val.max(0.0);
            }
            if !feasible {
                continue;
            }
            let obj: f64 = idx.iter().map(|&i| 0.5 * a * th[i] * th[i] - v[i] * th[i]).sum();
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                best = Some((obj, th));
            }
        }
        return best.unwrap().1;
    }
    let big = v.iter().map(|x| x.abs()).fold(0.0, f64::max) + 1.0;
    let (lo, hi) = match reg.set {
        ConstraintSet::NonnegativeOrthant => (0.0, big),
        ConstraintSet::Box { lo, hi } => (lo, hi),
        _ => (-big, big),
    };
    let mut th = v.to_vec();
    for i in 0..n {
        if !free(i) {
            th[i] = th[i].clamp(lo, hi);
        }
    }
    for _ in 0..5000 {
        let before = th.clone();
        for i in 0..n {
            let (a, b) = if free(i) { (-big, big) } else { (lo, hi) };
            let x = bisect(
                |z| {
                    let mut trial = th.clone();
                    trial[i] = z;
                    reg_right_derivative(reg, &trial, i, v, t)
                },
                a,
                b,
            );
            th[i] = x;
        }
        if max_abs_diff(&before, &th) < 1e-14 {
            break;
        }
    }
    th
}

pub fn random_regularizer(penalty: usize, set: usize, rng: &mut ChaCha8Rng) -> Regularizer {
    let mut w = || 10f64.powf(rng.random_range(-1.0..0.5));
    let p = match penalty {
        0 => Penalty::Zero,
        1 => Penalty::SumSquares(w()),
        2 => Penalty::L1(w()),
        3 => Penalty::Elastic { l1: w(), l2: w() },
        _ => Penalty::L2Norm(w()),
    };
    let s = match set {
        0 => ConstraintSet::FullSpace,
        1 => ConstraintSet::NonnegativeOrthant,
        2 => {
            let lo = rng.random_range(-1.5..0.0);
            ConstraintSet::Box {
                lo,
                hi: lo + rng.random_range(0.2..2.0),
            }
        }
        _ => ConstraintSet::ProbabilitySimplex,
    };
    Regularizer {
        penalty: p,
        set: s,
        skip_intercept: rng.random_bool(0.3),
        intercept_index: 0,
    }
}

/// Penalty and set indices whose combination the library supports.
pub fn regularizer_combos() -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for p in 0..5 {
        for s in 0..4 {
            if p == 4 && s >= 2 {
                continue;
            }
            out.push((p, s));
        }
    }
    out
}

pub fn penalty_name(p: usize) -> &'static str {
    ["zero", "sum_squares", "l1", "elastic", "l2_norm"][p]
}

pub fn set_name(s: usize) -> &'static str {
    ["full", "nonneg", "box", "simplex"][s]
}

/// One line of the prox comparison.
#[derive(Debug)]
pub struct ProxCheck {
    pub name: String,
    pub instances: usize,
    pub max_err: f64,
}

/// Compares every loss and regularizer prox with its reference on
/// `per_kind` random instances each.
pub fn prox_suite(per_kind: usize, seed: u64) -> Vec<ProxCheck> {
    let mut rng = rng(seed);
    let mut out = Vec::new();
    for (which, name) in LOSS_NAMES.iter().enumerate() {
        let mut max_err: f64 = 0.0;
        for _ in 0..per_kind {
            let inst = loss_instance(which, &mut rng);
            let data = inst.recs.node_data(&inst.model);
            let got = inst.model.prox(&inst.v, inst.t, &data, None).unwrap().theta;
            let want = loss_prox_oracle(&inst.model, &inst.recs, &inst.v, inst.t);
            max_err = max_err.max(max_abs_diff(&got, &want));
        }
        out.push(ProxCheck {
            name: format!("loss/{name}"),
            instances: per_kind,
            max_err,
        });
    }
    for (p, s) in regularizer_combos() {
        let mut max_err: f64 = 0.0;
        for _ in 0..per_kind {
            let reg = random_regularizer(p, s, &mut rng);
            let n = rng.random_range(1..=6);
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let t = 10f64.powf(rng.random_range(-1.5..0.7));
            let got = reg.prox(&v, t);
            let want = reg_prox_oracle(&reg, &v, t);
            max_err = max_err.max(max_abs_diff(&got, &want));
        }
        out.push(ProxCheck {
            name: format!("reg/{}+{}", penalty_name(p), set_name(s)),
            instances: per_kind,
            max_err,
        });
    }
    out
}

// ------------------------------------------------------ stratified problems

/// Path over `k` nodes plus random chords, weights in `[0.1, 3)`.
pub fn random_graph(k: usize, rng: &mut ChaCha8Rng) -> stratfit::StratGraph {
    let mut edges: Vec<(usize, usize, f64)> = (1..k).map(|i| (i - 1, i, rng.random_range(0.1..3.0))).collect();
    for _ in 0..k / 2 {
        let i = rng.random_range(0..k);
        let j = rng.random_range(0..k);
        if i + 1 < j || j + 1 < i {
            let (a, b) = (i.min(j), i.max(j));
            if !edges.iter().any(|e| (e.0, e.1) == (a, b)) {
                edges.push((a, b, rng.random_range(0.1..3.0)));
            }
        }
    }
    stratfit::StratGraph::from_index_edges(k, edges).unwrap()
}

/// Square loss with sum-of-squares regularization on a random graph.
pub struct QuadInstance {
    pub loss: LossModel,
    pub reg: Regularizer,
    pub gamma: f64,
    pub graph: stratfit::StratGraph,
    pub recs: Vec<Records>,
    pub nodes: Vec<NodeData>,
}

pub fn quad_instance(rng: &mut ChaCha8Rng, max_k: usize, max_n: usize) -> QuadInstance {
    let k = rng.random_range(2..=max_k);
    let n = rng.random_range(1..=max_n);
    let gamma = 10f64.powf(rng.random_range(-2.0..0.0));
    let loss = LossModel::new(LossKind::SquareRegression, n).unwrap();
    let truth: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let recs: Vec<Records> = (0..k)
        .map(|_| {
            let m = rng.random_range(0..=6);
            let xs: Vec<Vec<f64>> = (0..m)
                .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let ys = xs
                .iter()
                .map(|x: &Vec<f64>| vec![dot(x, &truth) + rng.random_range(-0.5..0.5)])
                .collect();
            Records { xs, ys }
        })
        .collect();
    let nodes = recs.iter().map(|r| r.node_data(&loss)).collect();
    QuadInstance {
        loss,
        reg: Regularizer::sum_squares(gamma),
        gamma,
        graph: random_graph(k, rng),
        recs,
        nodes,
    }
}

/// Solves the stationarity system of a [`QuadInstance`] densely:
/// `(X_k^T X_k + gamma I) theta_k + sum_l L_kl theta_l = X_k^T y_k`.
pub fn dense_kkt(inst: &QuadInstance) -> Vec<f64> {
    let k = inst.graph.num_nodes();
    let n = inst.loss.n_features;
    let mut a = DMatrix::<f64>::zeros(k * n, k * n);
    let mut b = DVector::<f64>::zeros(k * n);
    for (node, r) in inst.recs.iter().enumerate() {
        for (x, y) in r.xs.iter().zip(&r.ys) {
            for i in 0..n {
                b[node * n + i] += x[i] * y[0];
                for j in 0..n {
                    a[(node * n + i, node * n + j)] += x[i] * x[j];
                }
            }
        }
        for i in 0..n {
            a[(node * n + i, node * n + i)] += inst.gamma;
        }
    }
    for e in inst.graph.edges() {
        for d in 0..n {
            let (p, q) = (e.i * n + d, e.j * n + d);
            a[(p, p)] += e.weight;
            a[(q, q)] += e.weight;
            a[(p, q)] -= e.weight;
            a[(q, p)] -= e.weight;
        }
    }
    a.cholesky().unwrap().solve(&b).as_slice().to_vec()
}

/// Objective of a [`QuadInstance`] from its definition.
pub fn quad_objective(inst: &QuadInstance, theta: &[f64]) -> f64 {
    let n = inst.loss.n_features;
    let row = |k: usize| &theta[k * n..(k + 1) * n];
    let mut total = 0.0;
    for (k, r) in inst.recs.iter().enumerate() {
        for (x, y) in r.xs.iter().zip(&r.ys) {
            total += 0.5 * (dot(x, row(k)) - y[0]).powi(2);
        }
        total += 0.5 * inst.gamma * dot(row(k), row(k));
    }
    for e in inst.graph.edges() {
        let d: f64 = row(e.i).iter().zip(row(e.j)).map(|(a, b)| (a - b).powi(2)).sum();
        total += 0.5 * e.weight * d;
    }
    total
}

/// Empty dataset whose key columns fit `g`.
pub fn dataset_for(g: &stratfit::StratGraph, features: &[&str], outcome_dim: usize) -> stratfit::Dataset {
    let keys = if g.key_names().is_empty() {
        (0..g.key_arity()).map(|i| format!("k{i}")).collect()
    } else {
        g.key_names().to_vec()
    };
    let ys = if outcome_dim == 1 {
        vec!["y".to_string()]
    } else {
        (0..outcome_dim).map(|i| format!("y:{i}")).collect()
    };
    stratfit::Dataset::new(keys, features.iter().map(|s| s.to_string()).collect(), ys)
}

/// Smooth success probability over a 10 x 10 grid, in `[0.1, 0.9]`.
pub fn grid_probability(i: usize, j: usize) -> f64 {
    let (x, y) = (i as f64 / 9.0, j as f64 / 9.0);
    0.5 + 0.4 * (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).cos()
}

/// Bernoulli records on a 10 x 10 grid: `(graph, train, test)`.
pub fn bernoulli_grid(seed: u64, train_per_node: usize, test_per_node: usize) -> (stratfit::StratGraph, stratfit::Dataset, stratfit::Dataset) {
    let g = stratfit::graph::make_grid(&[10, 10], 1.0).unwrap();
    let mut rng = rng(seed);
    let mut train = dataset_for(&g, &[], 1);
    let mut test = dataset_for(&g, &[], 1);
    for (k, key) in g.nodes().iter().enumerate() {
        let p = grid_probability(k / 10, k % 10);
        for r in 0..train_per_node + test_per_node {
            let y = if rng.random_bool(p) { 1.0 } else { 0.0 };
            let ds = if r < train_per_node { &mut train } else { &mut test };
            ds.push(key.clone(), &[], &[y]).unwrap();
        }
    }
    (g, train, test)
}
