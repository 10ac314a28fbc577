//! Closed-form and one-dimensional proximal operators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// `prox_{t f}(v)` for `f(theta) = (1/2) theta^T G theta - h^T theta`:
/// solves `(I + t G) theta = v + t h`.
pub(super) fn quadratic(gram: &DMatrix<f64>, xty: &[f64], v: &[f64], t: f64) -> Vec<f64> {
    let n = v.len();
    let a = DMatrix::identity(n, n) + gram * t;
    let rhs = DVector::from_iterator(n, v.iter().zip(xty).map(|(vi, hi)| vi + t * hi));
    let chol = a.cholesky().expect("I + tG is positive definite for t > 0");
    chol.solve(&rhs).as_slice().to_vec()
}

/// Unconstrained prox of `f(theta) = N theta - S log theta`.
pub(super) fn poisson(v: f64, t: f64, n: f64, s: f64) -> f64 {
    let b = v - t * n;
    let disc = (b * b + 4.0 * t * s).sqrt();
    if b >= 0.0 {
        0.5 * (b + disc)
    } else {
        // conjugate form avoids cancellation when b is large and negative
        2.0 * t * s / (disc - b)
    }
}

/// Prox of `c * (-log theta)` at `v` (assumes `c >= 0`); `max(v, 0)` when `c = 0`.
pub(super) fn neg_log(v: f64, c: f64) -> f64 {
    let disc = (v * v + 4.0 * c).sqrt();
    if v >= 0.0 {
        0.5 * (v + disc)
    } else {
        2.0 * c / (disc - v)
    }
}

/// Prox of `t (-S log theta - (N - S) log(1 - theta))` over `[eps, 1 - eps]`.
///
/// The stationarity condition is the cubic
/// `theta^3 - (1 + v) theta^2 - (N t - v) theta + t S = 0`; rather than use
/// the cubic formula we find the unique root of the (increasing) derivative
/// by safeguarded Newton iteration on the bracket.
pub(super) fn bernoulli(v: f64, t: f64, n: f64, s: f64, eps: f64) -> f64 {
    let deriv = |th: f64| t * (-s / th + (n - s) / (1.0 - th)) + th - v;
    let second = |th: f64| t * (s / (th * th) + (n - s) / ((1.0 - th) * (1.0 - th))) + 1.0;
    let (mut lo, mut hi) = (eps, 1.0 - eps);
    if deriv(lo) >= 0.0 {
        return lo;
    }
    if deriv(hi) <= 0.0 {
        return hi;
    }
    let mut th = v.clamp(lo, hi);
    for _ in 0..200 {
        let g = deriv(th);
        if g == 0.0 {
            return th;
        }
        if g > 0.0 {
            hi = th;
        } else {
            lo = th;
        }
        let newton = th - g / second(th);
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let moved = (next - th).abs();
        th = next;
        if moved <= 1e-16 * th || hi - lo <= 1e-16 * th {
            break;
        }
    }
    th
}

/// Prox of `tau (Tr(S theta) - log det theta)` over `{theta >= eps I}`.
///
/// Stationarity `S - theta^{-1} + (theta - V)/tau = 0` means `theta` shares
/// eigenvectors with `V/tau - S`; with eigenvalues `s_i` of that matrix the
/// eigenvalues of `theta` solve `w/tau - 1/w = s_i`.
pub(super) fn covariance(s: &DMatrix<f64>, v: &DMatrix<f64>, tau: f64, eps: f64) -> Vec<f64> {
    let m = v.nrows();
    let sym_v = (v + v.transpose()) * 0.5;
    let target = sym_v / tau - s;
    let eig = SymmetricEigen::new(target);
    let w = eig.eigenvalues.map(|si| {
        let ts = tau * si;
        let disc = (ts * ts + 4.0 * tau).sqrt();
        let wi = if ts >= 0.0 { 0.5 * (ts + disc) } else { 2.0 * tau / (disc - ts) };
        wi.max(eps)
    });
    let q = &eig.eigenvectors;
    let theta = q * DMatrix::from_diagonal(&w) * q.transpose();
    let mut out = vec![0.0; m * m];
    for a in 0..m {
        for b in 0..m {
            out[a * m + b] = 0.5 * (theta[(a, b)] + theta[(b, a)]);
        }
    }
    out
}
