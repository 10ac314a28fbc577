//! Laplacian-regularized stratified models.
//!
//! One parameter vector is fitted per value of a categorical stratification
//! feature. The fits are coupled by a graph Laplacian penalty that pulls
//! neighboring strata toward each other, and solved with a distributed ADMM
//! method whose per-iteration work is parallel over nodes and coordinates.

pub mod block;
pub mod error;
pub mod graph;
pub mod laplacian_solve;
pub mod losses;
pub mod model;
pub mod regularizers;
pub mod solver;

pub use block::ParamBlock;
pub use error::{Error, Result};
pub use graph::{LaplacianMatrix, NodeKey, StratGraph};
pub use losses::{LossKind, LossModel, Metric, NodeData, Prediction};
pub use regularizers::{ConstraintSet, Penalty, Regularizer};
pub use solver::{fit, FitOutcome, Problem, SolverConfig, SolverReport, SolverState};
pub use model::{Dataset, FitOptions, FitReport, StratifiedModel};
