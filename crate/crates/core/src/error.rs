use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Shape {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("dense solve limited to dimension {cap}, got {dim}")]
    TooLarge { dim: usize, cap: usize },

    #[error("linear solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    SolveNotConverged { iterations: usize, residual: f64 },

    #[error("proximal step failed at node {node}: {reason}")]
    Prox { node: usize, reason: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("unknown stratification key {key}{}", nearest_hint(.nearest))]
    UnknownKey { key: String, nearest: Vec<String> },

    #[error("model has not been fitted")]
    Unfitted,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("model file: {0}")]
    ModelFile(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn nearest_hint(nearest: &[String]) -> String {
    if nearest.is_empty() {
        String::new()
    } else {
        format!(" (nearest known keys: {})", nearest.join(", "))
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
