//! Solvers for regularized Laplacian systems `(L + cI) X = B`.
//!
//! With `c > 0` the coefficient matrix is symmetric positive definite, so
//! every column system has a unique solution. Columns are independent and
//! solved concurrently.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::block::ParamBlock;
use crate::error::{Error, Result};
use crate::graph::LaplacianMatrix;

/// Largest dimension accepted by [`solve_dense`] unless overridden.
pub const DENSE_CAP: usize = 2000;

/// `(L + shift * I) X = rhs`, optionally warm-started from `warm`.
#[derive(Clone, Copy, Debug)]
pub struct RegularizedSystem<'a> {
    laplacian: &'a LaplacianMatrix,
    shift: f64,
    rhs: &'a ParamBlock,
    warm: Option<&'a ParamBlock>,
}

impl<'a> RegularizedSystem<'a> {
    pub fn new(
        laplacian: &'a LaplacianMatrix,
        shift: f64,
        rhs: &'a ParamBlock,
        warm: Option<&'a ParamBlock>,
    ) -> Result<Self> {
        if !(shift > 0.0 && shift.is_finite()) {
            return Err(Error::InvalidArgument(format!("shift must be positive, got {shift}")));
        }
        if rhs.rows() != laplacian.dim() {
            return Err(Error::Shape {
                expected: laplacian.dim(),
                got: rhs.rows(),
                context: "right-hand side rows",
            });
        }
        if let Some(w) = warm {
            if w.shape() != rhs.shape() {
                return Err(Error::Shape {
                    expected: rhs.rows() * rhs.cols(),
                    got: w.rows() * w.cols(),
                    context: "warm start shape",
                });
            }
        }
        Ok(RegularizedSystem {
            laplacian,
            shift,
            rhs,
            warm,
        })
    }

    pub fn laplacian(&self) -> &LaplacianMatrix {
        self.laplacian
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn rhs(&self) -> &ParamBlock {
        self.rhs
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CgOptions {
    /// Relative residual target: `||Ax - b|| <= tol * max(1, ||b||)`.
    pub tol: f64,
    /// Iteration cap per column; `None` means `10 * K`.
    pub max_iter: Option<usize>,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            tol: 1e-10,
            max_iter: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BlockSolution {
    pub x: ParamBlock,
    pub iterations: Vec<usize>,
    pub residuals: Vec<f64>,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct ColumnOutcome {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned CG on one column, updating `x` in place.
pub fn pcg_column(
    l: &LaplacianMatrix,
    shift: f64,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> ColumnOutcome {
    let k = l.dim();
    let target = tol * norm(b).max(1.0);
    let inv_diag: Vec<f64> = l.diagonal_slice().iter().map(|d| 1.0 / (d + shift)).collect();

    let mut r = vec![0.0; k];
    l.apply_shifted(shift, x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut res = norm(&r);
    if res <= target {
        return ColumnOutcome {
            iterations: 0,
            residual: res,
            converged: true,
        };
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; k];
    for it in 1..=max_iter {
        l.apply_shifted(shift, &p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..k {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = norm(&r);
        if res <= target {
            return ColumnOutcome {
                iterations: it,
                residual: res,
                converged: true,
            };
        }
        for i in 0..k {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..k {
            p[i] = z[i] + beta * p[i];
        }
    }
    ColumnOutcome {
        iterations: max_iter,
        residual: res,
        converged: false,
    }
}

/// Preconditioned conjugate gradient over every column of `sys`.
///
/// Non-convergence is reported through [`BlockSolution::converged`] with the
/// per-column residuals; the caller decides whether that is fatal.
pub fn solve_cg(sys: &RegularizedSystem<'_>, opts: &CgOptions) -> BlockSolution {
    let (k, n) = sys.rhs.shape();
    let max_iter = opts.max_iter.unwrap_or(10 * k).max(1);
    let columns: Vec<(Vec<f64>, ColumnOutcome)> = (0..n)
        .into_par_iter()
        .map(|j| {
            let b = sys.rhs.column(j);
            let mut x = match sys.warm {
                Some(w) => w.column(j),
                None => vec![0.0; k],
            };
            let out = pcg_column(sys.laplacian, sys.shift, &b, &mut x, opts.tol, max_iter);
            (x, out)
        })
        .collect();
    let mut x = ParamBlock::zeros(k, n);
    let mut iterations = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    let mut converged = true;
    for (j, (col, out)) in columns.into_iter().enumerate() {
        x.set_column(j, &col);
        iterations.push(out.iterations);
        residuals.push(out.residual);
        converged &= out.converged;
    }
    BlockSolution {
        x,
        iterations,
        residuals,
        converged,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CdOptions {
    pub tol: f64,
    pub max_epochs: usize,
}

impl Default for CdOptions {
    fn default() -> Self {
        CdOptions {
            tol: 1e-10,
            max_epochs: 100_000,
        }
    }
}

/// Randomized coordinate descent for `(L + shift * I) x = b`.
///
/// Each epoch visits every row once in a seeded random order and sets
/// `x_i = (b_i - sum_{j != i} a_ij x_j) / a_ii`, the exact minimizer of the
/// quadratic objective over coordinate `i`. Output is a deterministic
/// function of `(L, shift, b, seed)`.
pub fn solve_cd(l: &LaplacianMatrix, shift: f64, b: &[f64], seed: u64, tol: f64) -> Result<Vec<f64>> {
    solve_cd_with(
        l,
        shift,
        b,
        None,
        seed,
        &CdOptions {
            tol,
            ..CdOptions::default()
        },
    )
}

pub fn solve_cd_with(
    l: &LaplacianMatrix,
    shift: f64,
    b: &[f64],
    x0: Option<&[f64]>,
    seed: u64,
    opts: &CdOptions,
) -> Result<Vec<f64>> {
    if !(shift > 0.0 && shift.is_finite()) {
        return Err(Error::InvalidArgument(format!("shift must be positive, got {shift}")));
    }
    let k = l.dim();
    if b.len() != k {
        return Err(Error::Shape {
            expected: k,
            got: b.len(),
            context: "coordinate descent right-hand side",
        });
    }
    let mut x = x0.map_or_else(|| vec![0.0; k], <[f64]>::to_vec);
    let target = opts.tol * norm(b).max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..k).collect();
    let mut ax = vec![0.0; k];
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (cols, vals) = l.row(i);
            let mut off = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                if c != i {
                    off += v * x[c];
                }
            }
            x[i] = (b[i] - off) / (l.diagonal(i) + shift);
        }
        l.apply_shifted(shift, &x, &mut ax);
        residual = ax.iter().zip(b).map(|(a, bb)| (a - bb) * (a - bb)).sum::<f64>().sqrt();
        if residual <= target {
            return Ok(x);
        }
    }
    Err(Error::SolveNotConverged {
        iterations: opts.max_epochs,
        residual,
    })
}

/// Direct Cholesky solve of `(L + shift * I) X = B`; used as a test oracle.
pub fn solve_dense(l: &LaplacianMatrix, shift: f64, rhs: &ParamBlock) -> Result<ParamBlock> {
    solve_dense_capped(l, shift, rhs, DENSE_CAP)
}

pub fn solve_dense_capped(l: &LaplacianMatrix, shift: f64, rhs: &ParamBlock, cap: usize) -> Result<ParamBlock> {
    let k = l.dim();
    if k > cap {
        return Err(Error::TooLarge { dim: k, cap });
    }
    if !(shift > 0.0 && shift.is_finite()) {
        return Err(Error::InvalidArgument(format!("shift must be positive, got {shift}")));
    }
    if rhs.rows() != k {
        return Err(Error::Shape {
            expected: k,
            got: rhs.rows(),
            context: "right-hand side rows",
        });
    }
    let a = l.to_dense() + DMatrix::identity(k, k) * shift;
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("shifted Laplacian is not positive definite".into()))?;
    let mut out = ParamBlock::zeros(k, rhs.cols());
    for j in 0..rhs.cols() {
        let x = chol.solve(&DVector::from_vec(rhs.column(j)));
        out.set_column(j, x.as_slice());
    }
    Ok(out)
}
