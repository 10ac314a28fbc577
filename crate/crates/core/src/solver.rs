//! Distributed ADMM for the stratified fitting problem.
//!
//! The problem `minimize sum_k (l_k(theta_k) + r(theta_k)) + (1/2) theta^T (I (x) L) theta`
//! is split into three copies `theta` (losses), `theta_tilde` (regularizer)
//! and `theta_hat` (Laplacian) with consensus constraints
//! `theta = theta_hat`, `theta_tilde = theta_hat`. Each iteration
//!
//! 1. `theta_k = prox_{lambda l_k}(theta_hat_k - u_k)` for every node, in parallel;
//! 2. `theta_tilde_k = prox_{lambda r}(theta_hat_k - u_tilde_k)`, in parallel;
//! 3. solves `(L + (2/lambda) I) theta_hat_j = (1/lambda)(theta + u + theta_tilde + u_tilde)_j`
//!    for every coordinate `j` with warm-started conjugate gradient;
//! 4. updates the scaled duals `u += theta - theta_hat`, `u_tilde += theta_tilde - theta_hat`.
//!
//! The penalty `lambda` adapts to balance the primal and dual residuals.

use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block::ParamBlock;
use crate::error::{Error, Result};
use crate::graph::LaplacianMatrix;
use crate::laplacian_solve::{solve_cg, CgOptions, RegularizedSystem};
use crate::losses::{LossModel, NodeData};
use crate::regularizers::Regularizer;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub lambda0: f64,
    pub mu: f64,
    pub tau_incr: f64,
    pub tau_decr: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    /// Penalty adaptation stops after this iteration so that the penalty is
    /// eventually fixed.
    pub adapt_until: usize,
    pub cg: CgOptions,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    /// Emit one progress line per iteration through `log`.
    pub log_progress: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda0: 1.0,
            mu: 5.0,
            tau_incr: 2.0,
            tau_decr: 2.0,
            eps_abs: 1e-5,
            eps_rel: 1e-5,
            max_iter: 1000,
            adapt_until: 1000,
            cg: CgOptions::default(),
            threads: 0,
            log_progress: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("solver config: {what}")));
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return bad("lambda0 must be positive");
        }
        if !(self.mu > 1.0 && self.tau_incr > 1.0 && self.tau_decr > 1.0) {
            return bad("mu, tau_incr and tau_decr must exceed 1");
        }
        if !(self.eps_abs > 0.0 && self.eps_rel > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive");
        }
        if !(self.cg.tol > 0.0) {
            return bad("cg tolerance must be positive");
        }
        Ok(())
    }
}

/// Everything the solver needs about one fitting problem.
#[derive(Clone, Copy, Debug)]
pub struct Problem<'a> {
    pub loss: &'a LossModel,
    pub nodes: &'a [NodeData],
    pub reg: &'a Regularizer,
    pub laplacian: &'a LaplacianMatrix,
}

impl<'a> Problem<'a> {
    pub fn new(
        loss: &'a LossModel,
        nodes: &'a [NodeData],
        reg: &'a Regularizer,
        laplacian: &'a LaplacianMatrix,
    ) -> Result<Self> {
        if nodes.len() != laplacian.dim() {
            return Err(Error::Shape {
                expected: laplacian.dim(),
                got: nodes.len(),
                context: "node data count vs Laplacian dimension",
            });
        }
        loss.validate()?;
        reg.validate()?;
        if reg.skip_intercept && reg.intercept_index >= loss.param_dim() {
            return Err(Error::InvalidArgument(format!(
                "intercept index {} out of range for parameter dimension {}",
                reg.intercept_index,
                loss.param_dim()
            )));
        }
        Ok(Problem {
            loss,
            nodes,
            reg,
            laplacian,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.laplacian.dim()
    }

    pub fn param_dim(&self) -> usize {
        self.loss.param_dim()
    }

    /// `F(theta)` evaluated directly from its three terms.
    pub fn objective(&self, params: &ParamBlock) -> Result<f64> {
        if params.shape() != (self.num_nodes(), self.param_dim()) {
            return Err(Error::Shape {
                expected: self.num_nodes() * self.param_dim(),
                got: params.rows() * params.cols(),
                context: "objective parameters",
            });
        }
        let mut total = 0.0;
        for (k, d) in self.nodes.iter().enumerate() {
            let row = params.row(k);
            total += self.loss.eval(row, d)? + self.reg.eval(row);
        }
        Ok(total + self.laplacian.quadratic_form(params))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub r_norm: f64,
    pub s_norm: f64,
    pub eps_pri: f64,
    pub eps_dual: f64,
    pub lambda: f64,
}

impl IterationRecord {
    pub fn converged(&self) -> bool {
        self.r_norm <= self.eps_pri && self.s_norm <= self.eps_dual
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
}

/// ADMM iterate. `theta_hat_prev` is the consensus iterate before the most
/// recent Laplacian step and feeds the dual residual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverState {
    pub theta: ParamBlock,
    pub theta_tilde: ParamBlock,
    pub theta_hat: ParamBlock,
    pub theta_hat_prev: ParamBlock,
    pub u: ParamBlock,
    pub u_tilde: ParamBlock,
    pub lambda: f64,
    pub iteration: usize,
    pub history: Vec<IterationRecord>,
}

impl SolverState {
    /// All blocks zero.
    pub fn zeros(k: usize, n: usize, lambda: f64) -> Self {
        let z = ParamBlock::zeros(k, n);
        SolverState {
            theta: z.clone(),
            theta_tilde: z.clone(),
            theta_hat: z.clone(),
            theta_hat_prev: z.clone(),
            u: z.clone(),
            u_tilde: z,
            lambda,
            iteration: 0,
            history: Vec::new(),
        }
    }

    /// Starts every primal block at `theta0` with zero duals.
    pub fn from_params(theta0: &ParamBlock, lambda: f64) -> Self {
        let z = ParamBlock::zeros(theta0.rows(), theta0.cols());
        SolverState {
            theta: theta0.clone(),
            theta_tilde: theta0.clone(),
            theta_hat: theta0.clone(),
            theta_hat_prev: theta0.clone(),
            u: z.clone(),
            u_tilde: z,
            lambda,
            iteration: 0,
            history: Vec::new(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.theta.shape()
    }

    fn check_shape(&self, k: usize, n: usize) -> Result<()> {
        let blocks = [
            &self.theta,
            &self.theta_tilde,
            &self.theta_hat,
            &self.theta_hat_prev,
            &self.u,
            &self.u_tilde,
        ];
        if blocks.iter().any(|b| b.shape() != (k, n)) {
            return Err(Error::Shape {
                expected: k * n,
                got: self.theta.rows() * self.theta.cols(),
                context: "warm-start state",
            });
        }
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidArgument("warm-start penalty must be positive".into()));
        }
        Ok(())
    }

    /// `||(u, u_tilde)||_2`
    pub fn dual_norm(&self) -> f64 {
        let a = self.u.norm();
        let b = self.u_tilde.norm();
        (a * a + b * b).sqrt()
    }
}

/// Primal residual `r = (theta - theta_hat, theta_tilde - theta_hat)` and dual
/// residual `s = -(1/lambda)(theta_hat - theta_hat_prev, theta_hat - theta_hat_prev)`,
/// as norms of the stacked `2Kn` vectors.
pub fn residuals(state: &SolverState) -> Residuals {
    let a = state.theta.distance(&state.theta_hat);
    let b = state.theta_tilde.distance(&state.theta_hat);
    let d = state.theta_hat.distance(&state.theta_hat_prev);
    Residuals {
        primal: (a * a + b * b).sqrt(),
        dual: std::f64::consts::SQRT_2 * d / state.lambda,
    }
}

/// Tolerances `(eps_pri, eps_dual)` of the stopping rule.
pub fn tolerances(res: &Residuals, state: &SolverState, cfg: &SolverConfig) -> (f64, f64) {
    let (k, n) = state.shape();
    let base = ((2 * k * n) as f64).sqrt() * cfg.eps_abs;
    let eps_pri = base + cfg.eps_rel * res.primal.max(res.dual);
    let eps_dual = base + cfg.eps_rel / state.lambda * state.dual_norm();
    (eps_pri, eps_dual)
}

/// `||r|| <= eps_pri && ||s|| <= eps_dual`.
pub fn check_stop(res: &Residuals, state: &SolverState, cfg: &SolverConfig) -> bool {
    let (eps_pri, eps_dual) = tolerances(res, state, cfg);
    res.primal <= eps_pri && res.dual <= eps_dual
}

/// Residual-balancing penalty update. Returns the factor `c = lambda_new /
/// lambda_old` that was applied to the scaled duals.
pub fn adapt_penalty(state: &mut SolverState, res: &Residuals, cfg: &SolverConfig) -> f64 {
    let old = state.lambda;
    let new = if res.primal > cfg.mu * res.dual {
        old / cfg.tau_incr
    } else if res.dual > cfg.mu * res.primal {
        old * cfg.tau_decr
    } else {
        old
    };
    if new == old {
        return 1.0;
    }
    let c = new / old;
    state.lambda = new;
    state.u.scale(c);
    state.u_tilde.scale(c);
    c
}

/// Counters of inexact inner solves over a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InnerStats {
    pub prox_not_converged: usize,
    pub cg_not_converged: usize,
}

/// Stepwise driver; [`fit`] wraps it with stopping and adaptation.
pub struct Admm<'a> {
    problem: Problem<'a>,
    cfg: SolverConfig,
    state: SolverState,
    stats: InnerStats,
}

impl<'a> Admm<'a> {
    pub fn new(problem: Problem<'a>, cfg: SolverConfig, warm: Option<SolverState>) -> Result<Self> {
        cfg.validate()?;
        let (k, n) = (problem.num_nodes(), problem.param_dim());
        let state = match warm {
            Some(mut s) => {
                s.check_shape(k, n)?;
                s.iteration = 0;
                s.history.clear();
                s.theta_hat_prev = s.theta_hat.clone();
                s
            }
            None => SolverState::zeros(k, n, cfg.lambda0),
        };
        Ok(Admm {
            problem,
            cfg,
            state,
            stats: InnerStats::default(),
        })
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut SolverState {
        &mut self.state
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn inner_stats(&self) -> InnerStats {
        self.stats
    }

    pub fn into_state(self) -> SolverState {
        self.state
    }

    /// Runs steps 1 to 4 once and records the residuals. Does not adapt the penalty.
    pub fn iterate(&mut self) -> Result<IterationRecord> {
        let n = self.problem.param_dim();
        let lambda = self.state.lambda;
        let prob = self.problem;
        let st = &mut self.state;

        // 1. loss proximal steps
        let theta_hat = &st.theta_hat;
        let u = &st.u;
        let flags: Vec<bool> = st
            .theta
            .as_mut_slice()
            .par_chunks_mut(n)
            .enumerate()
            .map(|(k, row)| {
                let v: Vec<f64> = theta_hat.row(k).iter().zip(u.row(k)).map(|(a, b)| a - b).collect();
                let out = prob
                    .loss
                    .prox(&v, lambda, &prob.nodes[k], Some(row))
                    .map_err(|e| Error::Prox {
                        node: k,
                        reason: e.to_string(),
                    })?;
                if out.theta.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Prox {
                        node: k,
                        reason: "non-finite iterate".into(),
                    });
                }
                row.copy_from_slice(&out.theta);
                Ok(out.converged)
            })
            .collect::<Result<Vec<bool>>>()?;
        self.stats.prox_not_converged += flags.iter().filter(|c| !**c).count();

        // 2. regularizer proximal steps
        let u_tilde = &st.u_tilde;
        st.theta_tilde
            .as_mut_slice()
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(k, row)| {
                let v: Vec<f64> = theta_hat
                    .row(k)
                    .iter()
                    .zip(u_tilde.row(k))
                    .map(|(a, b)| a - b)
                    .collect();
                prob.reg.prox_into(&v, lambda, row);
            });

        // 3. regularized Laplacian systems
        let mut rhs = st.theta.clone();
        rhs.as_mut_slice()
            .par_iter_mut()
            .zip(st.u.as_slice().par_iter())
            .zip(st.theta_tilde.as_slice().par_iter())
            .zip(st.u_tilde.as_slice().par_iter())
            .for_each(|(((b, u), tt), ut)| *b = (*b + u + tt + ut) / lambda);
        let sys = RegularizedSystem::new(prob.laplacian, 2.0 / lambda, &rhs, Some(&st.theta_hat))?;
        let sol = solve_cg(&sys, &self.cfg.cg);
        if !sol.converged {
            self.stats.cg_not_converged += 1;
        }
        st.theta_hat_prev = std::mem::replace(&mut st.theta_hat, sol.x);

        // 4. dual updates
        let hat = st.theta_hat.as_slice();
        for ((u, t), h) in st.u.as_mut_slice().iter_mut().zip(st.theta.as_slice()).zip(hat) {
            *u += t - h;
        }
        for ((u, t), h) in st
            .u_tilde
            .as_mut_slice()
            .iter_mut()
            .zip(st.theta_tilde.as_slice())
            .zip(hat)
        {
            *u += t - h;
        }

        st.iteration += 1;
        let res = residuals(st);
        let (eps_pri, eps_dual) = tolerances(&res, st, &self.cfg);
        let rec = IterationRecord {
            iter: st.iteration,
            r_norm: res.primal,
            s_norm: res.dual,
            eps_pri,
            eps_dual,
            lambda,
        };
        st.history.push(rec);
        if self.cfg.log_progress {
            info!(
                "iter={} r={:.6e} s={:.6e} eps_pri={:.3e} eps_dual={:.3e} lambda={:.6e}",
                rec.iter, rec.r_norm, rec.s_norm, rec.eps_pri, rec.eps_dual, rec.lambda
            );
        }
        Ok(rec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: usize,
    pub converged: bool,
    pub r_norm: f64,
    pub s_norm: f64,
    pub lambda: f64,
    pub inner: InnerStats,
    pub wall_time_secs: f64,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// Fitted consensus parameters `theta_hat`; the best iterate seen when
    /// the run stopped at `max_iter`.
    pub params: ParamBlock,
    /// Final solver state, usable as a warm start.
    pub state: SolverState,
    pub report: SolverReport,
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs ADMM to the stopping criterion or `cfg.max_iter`.
pub fn fit(problem: &Problem<'_>, cfg: &SolverConfig, warm: Option<&SolverState>) -> Result<FitOutcome> {
    let start = Instant::now();
    let mut admm = Admm::new(*problem, cfg.clone(), warm.cloned())?;
    let outcome = with_pool(cfg.threads, || -> Result<(Option<ParamBlock>, bool)> {
        let mut best: Option<(f64, ParamBlock)> = None;
        for i in 0..cfg.max_iter {
            let rec = admm.iterate()?;
            if rec.converged() {
                return Ok((None, true));
            }
            let score = (rec.r_norm / rec.eps_pri).max(rec.s_norm / rec.eps_dual);
            if best.as_ref().is_none_or(|(b, _)| score < *b) {
                best = Some((score, admm.state().theta_hat.clone()));
            }
            if i + 1 < cfg.adapt_until {
                let res = Residuals {
                    primal: rec.r_norm,
                    dual: rec.s_norm,
                };
                adapt_penalty(admm.state_mut(), &res, cfg);
            }
        }
        Ok((best.map(|(_, p)| p), false))
    })??;
    let (best, converged) = outcome;
    let inner = admm.inner_stats();
    let state = admm.into_state();
    let last = state.history.last().copied();
    if !converged {
        warn!("ADMM stopped at max_iter = {} without reaching tolerance", cfg.max_iter);
    }
    let report = SolverReport {
        iterations: state.iteration,
        converged,
        r_norm: last.map_or(f64::NAN, |r| r.r_norm),
        s_norm: last.map_or(f64::NAN, |r| r.s_norm),
        lambda: state.lambda,
        inner,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok(FitOutcome {
        params: best.unwrap_or_else(|| state.theta_hat.clone()),
        state,
        report,
    })
}

/// Fits a sequence of related problems, warm-starting each from the
/// previous successful fit. Errors are isolated per problem.
pub fn regularization_path(problems: &[Problem<'_>], cfg: &SolverConfig) -> Vec<Result<FitOutcome>> {
    let mut warm: Option<SolverState> = None;
    let mut out = Vec::with_capacity(problems.len());
    for p in problems {
        let res = fit(p, cfg, warm.as_ref());
        if let Ok(f) = &res {
            warm = Some(f.state.clone());
        }
        out.push(res);
    }
    out
}
