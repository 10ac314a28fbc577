mod common;

use common::*;
use stratfit::graph::{make_complete, make_path};
use stratfit::losses::{LossKind, LossModel};
use stratfit::solver::{adapt_penalty, regularization_path, residuals, Admm, Residuals};
use stratfit::{fit, NodeData, ParamBlock, Problem, Regularizer, SolverConfig};

fn tight() -> SolverConfig {
    SolverConfig {
        eps_abs: 1e-10,
        eps_rel: 1e-10,
        max_iter: 20_000,
        ..Default::default()
    }
}

fn square_nodes(loss: &LossModel, data: &[&[(f64, f64)]]) -> Vec<NodeData> {
    data.iter()
        .map(|recs| {
            let xs = recs.iter().map(|r| r.0).collect();
            let ys = recs.iter().map(|r| r.1).collect();
            loss.node_data(xs, ys).unwrap()
        })
        .collect()
}

#[test]
fn matches_dense_stationarity_solution() {
    let mut rng = rng(3);
    for _ in 0..25 {
        let inst = quad_instance(&mut rng, 20, 5);
        let lap = inst.graph.laplacian();
        let p = Problem::new(&inst.loss, &inst.nodes, &inst.reg, &lap).unwrap();
        let cfg = SolverConfig {
            max_iter: 300,
            ..Default::default()
        };
        let out = fit(&p, &cfg, None).unwrap();
        assert!(out.report.converged, "{} iterations", out.report.iterations);
        let exact = dense_kkt(&inst);
        let f_admm = quad_objective(&inst, out.params.as_slice());
        let f_star = quad_objective(&inst, &exact);
        assert!((f_admm - f_star).abs() <= 1e-6 * f_star.abs().max(1.0), "{f_admm} vs {f_star}");
        let f_lib = p.objective(&ParamBlock::from_vec(out.params.rows(), out.params.cols(), exact)).unwrap();
        assert!((f_lib - f_star).abs() <= 1e-10 * f_star.abs().max(1.0));
    }
}

#[test]
fn data_free_middle_node_is_neighbor_average() {
    let loss = LossModel::new(LossKind::SquareRegression, 1).unwrap();
    for (w01, w12) in [(1.0, 1.0), (0.5, 3.0)] {
        let g = stratfit::StratGraph::from_index_edges(3, [(0, 1, w01), (1, 2, w12)]).unwrap();
        let nodes = square_nodes(&loss, &[&[(1.0, 2.0), (1.0, 3.0)], &[], &[(1.0, -1.0)]]);
        let reg = Regularizer::zero();
        let lap = g.laplacian();
        let out = fit(&Problem::new(&loss, &nodes, &reg, &lap).unwrap(), &tight(), None).unwrap();
        let th = out.params.as_slice();
        let avg = (w01 * th[0] + w12 * th[2]) / (w01 + w12);
        assert!((th[1] - avg).abs() < 1e-6, "{th:?}");
    }
}

#[test]
fn zero_weights_give_independent_fits() {
    let mut rng = rng(8);
    for _ in 0..5 {
        let mut inst = quad_instance(&mut rng, 10, 3);
        inst.graph = inst.graph.scaled(0.0).unwrap();
        let lap = inst.graph.laplacian();
        let p = Problem::new(&inst.loss, &inst.nodes, &inst.reg, &lap).unwrap();
        let out = fit(&p, &tight(), None).unwrap();
        // with no edges the stationarity system is block diagonal
        let separate = dense_kkt(&inst);
        assert!(max_abs_diff(out.params.as_slice(), &separate) < 1e-6);
    }
}

#[test]
fn huge_weights_collapse_to_common_model() {
    let mut rng = rng(9);
    for _ in 0..5 {
        let mut inst = quad_instance(&mut rng, 10, 3);
        inst.graph = inst.graph.scaled(1e6).unwrap();
        let lap = inst.graph.laplacian();
        let p = Problem::new(&inst.loss, &inst.nodes, &inst.reg, &lap).unwrap();
        let out = fit(&p, &SolverConfig::default(), None).unwrap();
        let mean = out.params.mean_row();
        let scale = mean.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
        assert!(out.params.spread() <= 1e-3 * scale, "spread {}", out.params.spread());
    }
}

#[test]
fn rescaled_duals_keep_unscaled_multipliers() {
    let mut rng = rng(10);
    let inst = quad_instance(&mut rng, 12, 3);
    let lap = inst.graph.laplacian();
    let p = Problem::new(&inst.loss, &inst.nodes, &inst.reg, &lap).unwrap();
    let cfg = SolverConfig {
        lambda0: 1e3,
        ..Default::default()
    };
    let mut admm = Admm::new(p, cfg.clone(), None).unwrap();
    let mut changes = 0;
    for _ in 0..200 {
        let rec = admm.iterate().unwrap();
        let before = admm.state().clone();
        let res = Residuals {
            primal: rec.r_norm,
            dual: rec.s_norm,
        };
        let c = adapt_penalty(admm.state_mut(), &res, &cfg);
        let after = admm.state();
        if c != 1.0 {
            changes += 1;
        }
        for (old, new) in [(&before.u, &after.u), (&before.u_tilde, &after.u_tilde)] {
            for (a, b) in old.as_slice().iter().zip(new.as_slice()) {
                assert!((a / before.lambda - b / after.lambda).abs() <= 1e-12 * (1.0 + (a / before.lambda).abs()));
            }
        }
    }
    assert!(changes > 0, "penalty never adapted");
}

#[test]
fn residuals_agree_with_history() {
    let loss = LossModel::new(LossKind::PoissonDist, 0).unwrap();
    let nodes: Vec<NodeData> = (0..6).map(|i| loss.node_data(vec![], vec![i as f64]).unwrap()).collect();
    let reg = Regularizer::zero();
    let lap = make_path(6, 1.0).unwrap().laplacian();
    let p = Problem::new(&loss, &nodes, &reg, &lap).unwrap();
    let mut admm = Admm::new(p, SolverConfig::default(), None).unwrap();
    for _ in 0..5 {
        let rec = admm.iterate().unwrap();
        let r = residuals(admm.state());
        assert_eq!((r.primal, r.dual), (rec.r_norm, rec.s_norm));
    }
}

#[test]
fn warm_start_from_solution_stops_quickly() {
    let mut rng = rng(12);
    let inst = quad_instance(&mut rng, 15, 3);
    let lap = inst.graph.laplacian();
    let p = Problem::new(&inst.loss, &inst.nodes, &inst.reg, &lap).unwrap();
    let cold = fit(&p, &SolverConfig::default(), None).unwrap();
    let warm = fit(&p, &SolverConfig::default(), Some(&cold.state)).unwrap();
    assert!(warm.report.converged);
    assert!(warm.report.iterations <= 2, "{}", warm.report.iterations);
}

#[test]
fn single_thread_matches_default_pool() {
    let mut rng = rng(13);
    let inst = quad_instance(&mut rng, 15, 3);
    let lap = inst.graph.laplacian();
    let p = Problem::new(&inst.loss, &inst.nodes, &inst.reg, &lap).unwrap();
    let a = fit(&p, &SolverConfig::default(), None).unwrap();
    let b = fit(
        &p,
        &SolverConfig {
            threads: 1,
            ..Default::default()
        },
        None,
    )
    .unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.report.iterations, b.report.iterations);
}

#[test]
fn path_over_regularization_weights() {
    let loss = LossModel::new(LossKind::SquareRegression, 1).unwrap();
    let nodes = square_nodes(&loss, &[&[(1.0, 4.0)], &[(1.0, -2.0)], &[(1.0, 1.0)]]);
    let lap = make_complete(3, 1.0).unwrap().laplacian();
    let regs: Vec<Regularizer> = [0.0, 0.5, 2.0, 8.0].iter().map(|&g| Regularizer::sum_squares(g)).collect();
    let problems: Vec<Problem> = regs
        .iter()
        .map(|r| Problem::new(&loss, &nodes, r, &lap).unwrap())
        .collect();
    let path = regularization_path(&problems, &tight());
    let mut prev = f64::INFINITY;
    for (res, p) in path.iter().zip(&problems) {
        let out = res.as_ref().unwrap();
        assert!(out.report.converged);
        let cold = fit(p, &tight(), None).unwrap();
        assert!(max_abs_diff(out.params.as_slice(), cold.params.as_slice()) < 1e-7);
        // stronger shrinkage, smaller norm
        let norm = out.params.norm();
        assert!(norm < prev);
        prev = norm;
    }
}

#[test]
fn bernoulli_all_ones_boundary_through_solver() {
    let loss = LossModel::new(LossKind::BernoulliDist, 0).unwrap();
    let nodes = vec![loss.node_data(vec![], vec![1.0; 4]).unwrap()];
    let reg = Regularizer::zero();
    let lap = stratfit::StratGraph::from_index_edges(1, []).unwrap().laplacian();
    let out = fit(&Problem::new(&loss, &nodes, &reg, &lap).unwrap(), &tight(), None).unwrap();
    assert!((out.params.as_slice()[0] - (1.0 - loss.eps)).abs() < 1e-8);
}
