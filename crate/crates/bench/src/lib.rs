//! Benchmark fixtures shared by the criterion targets.

use stratfit::graph::{cartesian_product, make_cycle, make_path};
use stratfit::losses::{LossKind, LossModel};
use stratfit::{NodeData, StratGraph};

/// `path(a) x path(b) x cycle(c)`.
pub fn product_graph(a: usize, b: usize, c: usize) -> StratGraph {
    let ab = cartesian_product(&make_path(a, 1.0).unwrap(), &make_path(b, 1.0).unwrap()).unwrap();
    cartesian_product(&ab, &make_cycle(c, 1.0).unwrap()).unwrap()
}

/// One Poisson count per node from a cheap deterministic hash.
pub fn poisson_counts(loss: &LossModel, k: usize) -> Vec<NodeData> {
    (0..k)
        .map(|i| {
            let y = ((i as u64).wrapping_mul(2654435761) >> 7) % 6;
            loss.node_data(vec![], vec![y as f64]).unwrap()
        })
        .collect()
}

pub fn poisson() -> LossModel {
    LossModel::new(LossKind::PoissonDist, 0).unwrap()
}
