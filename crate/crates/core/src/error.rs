//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("MDP validation failed with {} violation(s): {}", .0.len(), format_violations(.0))]
    InvalidMdp(Vec<crate::mdp::Violation>),

    #[error("linear solve failed: {0}")]
    SolveFailure(String),

    #[error("non-finite policy parameters at outer iteration {outer}, inner step {inner}")]
    NonFiniteParams { outer: usize, inner: usize },

    #[error("fixed-point iteration did not converge within {max_iterations} sweeps (residual {residual:.3e})")]
    NoConvergence {
        max_iterations: usize,
        residual: f64,
    },

    #[error("inner simplex maximization stalled at state {state} (gradient mapping {gradient_mapping:.3e})")]
    InnerSolveStall { state: usize, gradient_mapping: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_violations(violations: &[crate::mdp::Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
