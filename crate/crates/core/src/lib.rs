//! Deterministic tabular PPO-Clip with f-divergence regularization.
//!
//! The crate provides exact (solve-based, sample-free) machinery for finite
//! discounted MDPs under softmax policies:
//!
//! - [`mdp`]: MDP representation, validation, occupancy solves, JSON I/O.
//! - [`policy`]: softmax tables, score functions, per-state Jacobians.
//! - [`divergence`]: the five supported generators with derivatives and
//!   their curvature/derivative-bound constants.
//! - [`eval`]: regularized values, advantages, the exact policy gradient,
//!   smoothness factors, gradient-domination bounds, and step budgets.
//! - [`ppo`]: the double-loop clipped-surrogate optimizer.
//! - [`oracle`]: regularized optimal policies and values, independent of the
//!   gradient machinery.
//! - [`checks`]: randomized certification of every guarantee the optimizer
//!   relies on.

// Negated float comparisons (`!(x > 0.0)`) are deliberate: they reject NaN
// alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod divergence;
pub mod error;
pub mod eval;
pub mod mdp;
pub mod oracle;
pub mod policy;
pub mod ppo;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
