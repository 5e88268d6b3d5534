use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the kinematics, estimation and simulation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: expected a pure quaternion, real part is {w}")]
    NotPure { op: &'static str, w: f64 },

    #[error("{op}: expected unit norm, got {norm}")]
    NotUnit { op: &'static str, norm: f64 },

    #[error("{0}: non-finite input")]
    NonFinite(&'static str),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("problem is not strictly convex: {0}")]
    NotStrictlyConvex(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("infeasible initialization: {0}")]
    InfeasibleInit(String),

    #[error("QP failure budget exceeded: {failures} failed ticks (budget {budget})")]
    QpBudgetExceeded { failures: usize, budget: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
