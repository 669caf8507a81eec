//! Softmax policy parameterization: logits to distributions, score functions,
//! per-state Jacobians, and numerically safe log-probabilities.
//!
//! Log-probabilities are always computed from max-shifted logits, never as
//! `ln(probs)`, so they stay finite even when a probability underflows.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Policy logits `theta(s,a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub theta: Array2<f64>,
}

impl PolicyParams {
    pub fn new(theta: Array2<f64>) -> Result<Self> {
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite logits".into()));
        }
        Ok(PolicyParams { theta })
    }

    pub fn num_states(&self) -> usize {
        self.theta.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.theta.ncols()
    }

    /// Serializes theta as a nested `[s][a]` JSON array.
    pub fn to_json(&self) -> Result<String> {
        let rows: Vec<Vec<f64>> = self.theta.rows().into_iter().map(|r| r.to_vec()).collect();
        Ok(serde_json::to_string_pretty(&rows)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rows: Vec<Vec<f64>> = serde_json::from_str(text)?;
        let ns = rows.len();
        let na = rows.first().map_or(0, |r| r.len());
        if ns == 0 || na == 0 || rows.iter().any(|r| r.len() != na) {
            return Err(Error::InvalidInput("ragged or empty logit table".into()));
        }
        PolicyParams::new(Array2::from_shape_fn((ns, na), |(s, a)| rows[s][a]))
    }
}

/// Tabulated softmax policy: probabilities and log-probabilities per state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    pub probs: Array2<f64>,
    pub log_probs: Array2<f64>,
}

impl PolicyTable {
    pub fn num_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.probs.ncols()
    }

    /// Smallest probability entry, computed in log space so that extreme
    /// logits report the underflowed magnitude rather than 0.
    pub fn min_prob(&self) -> f64 {
        self.log_probs
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
            .exp()
    }

    /// Logits whose softmax reproduces this table exactly.
    pub fn logits(&self) -> PolicyParams {
        PolicyParams {
            theta: self.log_probs.clone(),
        }
    }
}

/// Row-wise softmax via the max-shift trick.
pub fn policy_from_params(params: &PolicyParams) -> Result<PolicyTable> {
    if params.theta.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite logits".into()));
    }
    let (ns, na) = params.theta.dim();
    let mut probs = Array2::zeros((ns, na));
    let mut log_probs = Array2::zeros((ns, na));
    for s in 0..ns {
        let row = params.theta.row(s);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|&t| (t - m).exp()).sum();
        let log_z = z.ln();
        for a in 0..na {
            let lp = params.theta[[s, a]] - m - log_z;
            log_probs[[s, a]] = lp;
            probs[[s, a]] = lp.exp();
        }
    }
    Ok(PolicyTable { probs, log_probs })
}

/// Score function `psi(s,a) = e_a - pi(.|s)`, the gradient of
/// `ln pi(a|s)` with respect to the state's logits. Its 2-norm never
/// exceeds sqrt(2).
pub fn score(policy: &PolicyTable, s: usize, a: usize) -> Result<Array1<f64>> {
    check_indices(policy, s, a)?;
    let mut psi = -&policy.probs.row(s).to_owned();
    psi[a] += 1.0;
    Ok(psi)
}

/// Per-state softmax Jacobian `H(theta_s) = diag(pi) - pi pi^T`.
/// Symmetric PSD, annihilates the all-ones vector, spectral norm <= 1.
pub fn policy_jacobian(policy: &PolicyTable, s: usize) -> Result<Array2<f64>> {
    if s >= policy.num_states() {
        return Err(Error::InvalidInput(format!("state {s} out of range")));
    }
    let pi = policy.probs.row(s);
    let na = policy.num_actions();
    let mut h = Array2::zeros((na, na));
    for i in 0..na {
        for j in 0..na {
            h[[i, j]] = if i == j {
                pi[i] * (1.0 - pi[i])
            } else {
                -pi[i] * pi[j]
            };
        }
    }
    Ok(h)
}

fn check_indices(policy: &PolicyTable, s: usize, a: usize) -> Result<()> {
    if s >= policy.num_states() || a >= policy.num_actions() {
        return Err(Error::InvalidInput(format!(
            "index (s={s}, a={a}) out of range for {}x{} policy",
            policy.num_states(),
            policy.num_actions()
        )));
    }
    Ok(())
}
