//! Finite MDP representation, validation, policy-conditioned transition
//! algebra, and discounted state-occupancy solves.
//!
//! All linear systems here involve `I - gamma * P_pi` with `P_pi` row
//! stochastic and `gamma < 1`, so the matrix is always invertible. Solves use
//! dense LU; sizes are desk-scale.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::policy::PolicyTable;

/// Row-stochasticity / bounds tolerance used by validation.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Tolerance on linear-solve residuals.
pub const SOLVE_TOL: f64 = 1e-10;

/// A finite discounted MDP: transition kernel `P(s'|s,a)`, reward table
/// `r(s,a)` bounded in `[0, r_max]`, and discount factor `gamma` in `[0,1)`.
#[derive(Debug, Clone)]
pub struct Mdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// `transition[[s, a, s']] = P(s'|s,a)`.
    pub transition: Array3<f64>,
    /// `reward[[s, a]] = r(s,a)`.
    pub reward: Array2<f64>,
    pub gamma: f64,
    pub r_max: f64,
}

/// One violated invariant, with its location when applicable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub message: String,
    pub state: Option<usize>,
    pub action: Option<usize>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.state, self.action) {
            (Some(s), Some(a)) => write!(f, "{} at (s={s}, a={a})", self.message),
            (Some(s), None) => write!(f, "{} at (s={s})", self.message),
            _ => write!(f, "{}", self.message),
        }
    }
}

impl Mdp {
    /// Builds an MDP and rejects it if any invariant is violated.
    pub fn new(
        transition: Array3<f64>,
        reward: Array2<f64>,
        gamma: f64,
        r_max: f64,
    ) -> Result<Self> {
        let (num_states, num_actions, s2) = transition.dim();
        if s2 != num_states || reward.dim() != (num_states, num_actions) {
            return Err(Error::DimensionMismatch(format!(
                "transition {:?} vs reward {:?}",
                transition.dim(),
                reward.dim()
            )));
        }
        let mdp = Mdp {
            num_states,
            num_actions,
            transition,
            reward,
            gamma,
            r_max,
        };
        let report = validate_mdp(&mdp);
        if report.is_empty() {
            Ok(mdp)
        } else {
            Err(Error::InvalidMdp(report))
        }
    }
}

/// Checks every MDP invariant and reports all violations; an empty report
/// means the MDP is valid. Never aborts.
pub fn validate_mdp(mdp: &Mdp) -> Vec<Violation> {
    let mut report = Vec::new();
    if mdp.num_states == 0 || mdp.num_actions == 0 {
        report.push(Violation {
            message: "state and action counts must be positive".into(),
            state: None,
            action: None,
        });
        return report;
    }
    if !(0.0..1.0).contains(&mdp.gamma) {
        report.push(Violation {
            message: format!("gamma {} outside [0,1)", mdp.gamma),
            state: None,
            action: None,
        });
    }
    if mdp.r_max < 0.0 || !mdp.r_max.is_finite() {
        report.push(Violation {
            message: format!("r_max {} must be finite and >= 0", mdp.r_max),
            state: None,
            action: None,
        });
    }
    for s in 0..mdp.num_states {
        for a in 0..mdp.num_actions {
            let mut row_sum = 0.0;
            for s2 in 0..mdp.num_states {
                let p = mdp.transition[[s, a, s2]];
                if !(p >= 0.0) {
                    report.push(Violation {
                        message: format!("negative or non-finite transition probability {p}"),
                        state: Some(s),
                        action: Some(a),
                    });
                }
                row_sum += p;
            }
            if (row_sum - 1.0).abs() > STOCHASTIC_TOL {
                report.push(Violation {
                    message: format!("transition row sums to {row_sum}, not 1"),
                    state: Some(s),
                    action: Some(a),
                });
            }
            let r = mdp.reward[[s, a]];
            if !(0.0..=mdp.r_max).contains(&r) || !r.is_finite() {
                report.push(Violation {
                    message: format!("reward {r} outside [0, r_max={}]", mdp.r_max),
                    state: Some(s),
                    action: Some(a),
                });
            }
        }
    }
    report
}

/// Role of an initial state distribution: `GradientEval` is the distribution
/// the policy gradient is evaluated at (must be strictly positive),
/// `Reporting` is the distribution values are reported under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistributionRole {
    GradientEval,
    Reporting,
}

/// A probability vector over states, tagged with its role.
#[derive(Debug, Clone)]
pub struct InitialDistribution {
    pub weights: Array1<f64>,
    pub role: DistributionRole,
}

impl InitialDistribution {
    pub fn new(weights: Array1<f64>, role: DistributionRole) -> Result<Self> {
        let sum: f64 = weights.sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidInput(format!(
                "initial distribution sums to {sum}, not 1"
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput(
                "initial distribution has negative or non-finite entries".into(),
            ));
        }
        if role == DistributionRole::GradientEval && weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::InvalidInput(
                "gradient-evaluation distribution must be strictly positive".into(),
            ));
        }
        Ok(InitialDistribution { weights, role })
    }

    pub fn uniform(num_states: usize, role: DistributionRole) -> Self {
        InitialDistribution {
            weights: Array1::from_elem(num_states, 1.0 / num_states as f64),
            role,
        }
    }

    /// Smallest entry; the exploration floor `c_u` when role is GradientEval.
    pub fn min_weight(&self) -> f64 {
        self.weights.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// State-to-state transition matrix under a policy:
/// `[P_pi]_{s,s'} = sum_a pi(a|s) P(s'|s,a)`.
pub fn transition_under_policy(mdp: &Mdp, policy: &PolicyTable) -> Result<Array2<f64>> {
    check_policy_dims(mdp, policy)?;
    let mut p_pi = Array2::zeros((mdp.num_states, mdp.num_states));
    for s in 0..mdp.num_states {
        for a in 0..mdp.num_actions {
            let w = policy.probs[[s, a]];
            if w == 0.0 {
                continue;
            }
            for s2 in 0..mdp.num_states {
                p_pi[[s, s2]] += w * mdp.transition[[s, a, s2]];
            }
        }
    }
    Ok(p_pi)
}

/// Discounted state-occupancy vector `d` solving
/// `d^T = (1-gamma) u^T (I - gamma P_pi)^{-1}`.
///
/// The output is a probability vector with `d(s) >= (1-gamma) u(s)`.
pub fn discounted_state_distribution(
    mdp: &Mdp,
    policy: &PolicyTable,
    dist: &InitialDistribution,
) -> Result<Array1<f64>> {
    let p_pi = transition_under_policy(mdp, policy)?;
    if dist.weights.len() != mdp.num_states {
        return Err(Error::DimensionMismatch(format!(
            "distribution has {} entries, MDP has {} states",
            dist.weights.len(),
            mdp.num_states
        )));
    }
    // Transposed system: (I - gamma P_pi)^T d = (1-gamma) u.
    let n = mdp.num_states;
    let mut a = nalgebra::DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] -= mdp.gamma * p_pi[[j, i]];
        }
    }
    let rhs =
        nalgebra::DVector::from_iterator(n, dist.weights.iter().map(|&u| (1.0 - mdp.gamma) * u));
    let d = solve_lu(a, rhs)?;
    Ok(Array1::from_iter(d.iter().cloned()))
}

/// Applies the accumulated visitation matrix: returns
/// `(I - gamma P_pi)^{-1} v` via a linear solve.
pub fn accumulated_visitation_apply(
    mdp: &Mdp,
    policy: &PolicyTable,
    v: &Array1<f64>,
) -> Result<Array1<f64>> {
    let p_pi = transition_under_policy(mdp, policy)?;
    visitation_solve(&p_pi, mdp.gamma, v)
}

/// Solves `(I - gamma P_pi) x = v` given a precomputed `P_pi`.
pub fn visitation_solve(p_pi: &Array2<f64>, gamma: f64, v: &Array1<f64>) -> Result<Array1<f64>> {
    let n = p_pi.nrows();
    if v.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "vector has {} entries, matrix is {n}x{n}",
            v.len()
        )));
    }
    let mut a = nalgebra::DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] -= gamma * p_pi[[i, j]];
        }
    }
    let rhs = nalgebra::DVector::from_iterator(n, v.iter().cloned());
    let x = solve_lu(a, rhs)?;
    Ok(Array1::from_iter(x.iter().cloned()))
}

fn solve_lu(
    a: nalgebra::DMatrix<f64>,
    b: nalgebra::DVector<f64>,
) -> Result<nalgebra::DVector<f64>> {
    let lu = a.clone().lu();
    let x = lu
        .solve(&b)
        .ok_or_else(|| Error::SolveFailure("singular visitation system".into()))?;
    let residual = (&a * &x - &b).amax();
    if residual > SOLVE_TOL {
        return Err(Error::SolveFailure(format!(
            "solve residual {residual:.3e} exceeds {SOLVE_TOL:.0e}"
        )));
    }
    Ok(x)
}

fn check_policy_dims(mdp: &Mdp, policy: &PolicyTable) -> Result<()> {
    if policy.probs.dim() != (mdp.num_states, mdp.num_actions) {
        return Err(Error::DimensionMismatch(format!(
            "policy is {:?}, MDP is ({}, {})",
            policy.probs.dim(),
            mdp.num_states,
            mdp.num_actions
        )));
    }
    Ok(())
}

/// Generates a random MDP, deterministic in `seed`. Transition rows are
/// normalized positive uniforms floored at `1e-3/|S|` so instances stay
/// well-conditioned; rewards are uniform in `[0, r_max]`.
pub fn random_mdp(
    seed: u64,
    num_states: usize,
    num_actions: usize,
    r_max: f64,
    gamma: f64,
) -> Result<Mdp> {
    if num_states == 0 || num_actions == 0 {
        return Err(Error::InvalidInput("dimensions must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let floor = 1e-3 / num_states as f64;
    let mut transition = Array3::zeros((num_states, num_actions, num_states));
    for s in 0..num_states {
        for a in 0..num_actions {
            let mut row: Vec<f64> = (0..num_states)
                .map(|_| rng.gen_range(0.0..1.0f64).max(floor))
                .collect();
            let sum: f64 = row.iter().sum();
            for x in &mut row {
                *x /= sum;
            }
            for (s2, &p) in row.iter().enumerate() {
                transition[[s, a, s2]] = p;
            }
        }
    }
    let reward = Array2::from_shape_fn((num_states, num_actions), |_| rng.gen_range(0.0..=r_max));
    Mdp::new(transition, reward, gamma, r_max)
}

/// Serialization schema for MDP files.
#[derive(Debug, Serialize, Deserialize)]
struct MdpFile {
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    r_max: f64,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
}

/// Loads an MDP from JSON; rejects files whose contents fail validation.
pub fn load_mdp(path: &Path) -> Result<Mdp> {
    let text = std::fs::read_to_string(path)?;
    mdp_from_json(&text)
}

pub fn mdp_from_json(text: &str) -> Result<Mdp> {
    let file: MdpFile = serde_json::from_str(text)?;
    let (ns, na) = (file.num_states, file.num_actions);
    if file.transition.len() != ns
        || file
            .transition
            .iter()
            .any(|sa| sa.len() != na || sa.iter().any(|row| row.len() != ns))
        || file.reward.len() != ns
        || file.reward.iter().any(|row| row.len() != na)
    {
        return Err(Error::DimensionMismatch(
            "MDP file arrays do not match declared dimensions".into(),
        ));
    }
    let transition = Array3::from_shape_fn((ns, na, ns), |(s, a, s2)| file.transition[s][a][s2]);
    let reward = Array2::from_shape_fn((ns, na), |(s, a)| file.reward[s][a]);
    Mdp::new(transition, reward, file.gamma, file.r_max)
}

pub fn mdp_to_json(mdp: &Mdp) -> Result<String> {
    let file = MdpFile {
        num_states: mdp.num_states,
        num_actions: mdp.num_actions,
        gamma: mdp.gamma,
        r_max: mdp.r_max,
        transition: (0..mdp.num_states)
            .map(|s| {
                (0..mdp.num_actions)
                    .map(|a| {
                        (0..mdp.num_states)
                            .map(|s2| mdp.transition[[s, a, s2]])
                            .collect()
                    })
                    .collect()
            })
            .collect(),
        reward: (0..mdp.num_states)
            .map(|s| (0..mdp.num_actions).map(|a| mdp.reward[[s, a]]).collect())
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn save_mdp(mdp: &Mdp, path: &Path) -> Result<()> {
    std::fs::write(path, mdp_to_json(mdp)?)?;
    Ok(())
}
