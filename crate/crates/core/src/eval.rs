//! Exact evaluation of the divergence-regularized value function, Q-tables,
//! advantages, the exact policy gradient, and the constants that drive step
//! budgets (smoothness factors, advantage bounds, gradient-domination
//! coefficients).
//!
//! Everything here is closed-form linear algebra on the tabular MDP: value
//! vectors come from `(I - gamma P_pi)` solves, never from sampling.

use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::divergence::{
    f_eval, policy_divergence_vector, ratio_table, DivergenceConstants, DivergenceKind,
};
use crate::error::{Error, Result};
use crate::mdp::{
    discounted_state_distribution, transition_under_policy, visitation_solve, InitialDistribution,
    Mdp,
};
use crate::policy::{policy_from_params, PolicyParams, PolicyTable};

/// Which KL direction regularizes the surrogate objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    ForwardKl,
    ReverseKl,
}

impl Regularizer {
    pub fn divergence(self) -> DivergenceKind {
        match self {
            Regularizer::ForwardKl => DivergenceKind::ForwardKl,
            Regularizer::ReverseKl => DivergenceKind::ReverseKl,
        }
    }
}

impl std::fmt::Display for Regularizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Regularizer::ForwardKl => write!(f, "forward-kl"),
            Regularizer::ReverseKl => write!(f, "reverse-kl"),
        }
    }
}

/// Everything the regularized evaluation of one `(policy, MDP, divergence,
/// lambda)` instance produces.
#[derive(Debug, Clone)]
pub struct RegularizedQuantities {
    /// Regularized value vector, `v = v_reward - lambda * v_reg`.
    pub v: Array1<f64>,
    pub v_reward: Array1<f64>,
    /// Discounted accumulation of per-state divergences; nonnegative.
    pub v_reg: Array1<f64>,
    pub q_tilde: Array2<f64>,
    /// Centered advantage: `sum_a pi(a|s) a_tilde(s,a) = 0` per state.
    pub a_tilde: Array2<f64>,
    pub d_u: Array1<f64>,
    /// Ratio table `w(s,a) = pi(a|s) / pi_ref(a|s)`.
    pub ratio: Array2<f64>,
    /// Per-state divergence values `D_f(pi(.|s), pi_ref(.|s))`.
    pub divergence: Array1<f64>,
    pub policy: PolicyTable,
    pub lambda: f64,
    pub gamma: f64,
}

impl RegularizedQuantities {
    /// Regularized value under an initial distribution.
    pub fn value_at(&self, dist: &InitialDistribution) -> f64 {
        self.v.dot(&dist.weights)
    }
}

/// Solves the regularized evaluation equations for a policy given by logits.
pub fn evaluate(
    mdp: &Mdp,
    theta: &PolicyParams,
    pi_ref: &PolicyTable,
    kind: DivergenceKind,
    lambda: f64,
    u: &InitialDistribution,
) -> Result<RegularizedQuantities> {
    if lambda <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "regularization weight {lambda} must be > 0"
        )));
    }
    let policy = policy_from_params(theta)?;
    evaluate_policy(mdp, &policy, pi_ref, kind, lambda, u)
}

/// Same as [`evaluate`] for a pre-tabulated policy.
pub fn evaluate_policy(
    mdp: &Mdp,
    policy: &PolicyTable,
    pi_ref: &PolicyTable,
    kind: DivergenceKind,
    lambda: f64,
    u: &InitialDistribution,
) -> Result<RegularizedQuantities> {
    let (ns, na) = (mdp.num_states, mdp.num_actions);
    if policy.probs.dim() != (ns, na) || pi_ref.probs.dim() != (ns, na) {
        return Err(Error::DimensionMismatch(format!(
            "policy {:?} / reference {:?} vs MDP ({ns}, {na})",
            policy.probs.dim(),
            pi_ref.probs.dim()
        )));
    }
    let p_pi = transition_under_policy(mdp, policy)?;
    let divergence = policy_divergence_vector(kind, policy, pi_ref)?;
    let ratio = ratio_table(policy, pi_ref)?;

    // Expected reward per state under the policy.
    let mut r_pi = Array1::zeros(ns);
    for s in 0..ns {
        for a in 0..na {
            r_pi[s] += policy.probs[[s, a]] * mdp.reward[[s, a]];
        }
    }

    let v_reward = visitation_solve(&p_pi, mdp.gamma, &r_pi)?;
    let v_reg = visitation_solve(&p_pi, mdp.gamma, &divergence)?;
    let v = &v_reward - &(lambda * &v_reg);

    let mut q_tilde = Array2::zeros((ns, na));
    let mut a_tilde = Array2::zeros((ns, na));
    for s in 0..ns {
        for a in 0..na {
            let mut continuation = 0.0;
            for s2 in 0..ns {
                continuation += mdp.transition[[s, a, s2]] * v[s2];
            }
            let q = mdp.reward[[s, a]] - lambda * divergence[s] + mdp.gamma * continuation;
            q_tilde[[s, a]] = q;
            a_tilde[[s, a]] = q - v[s];
        }
    }

    let d_u = discounted_state_distribution(mdp, policy, u)?;

    Ok(RegularizedQuantities {
        v,
        v_reward,
        v_reg,
        q_tilde,
        a_tilde,
        d_u,
        ratio,
        divergence,
        policy: policy.clone(),
        lambda,
        gamma: mdp.gamma,
    })
}

/// Exact gradient of the regularized value at `u` with respect to the
/// logits:
/// `g(s,a) = d_u(s)/(1-gamma) * pi(a|s) *
///           (a_tilde(s,a) - lambda (f'(w_sa) - sum_a' pi(a'|s) f'(w_sa')))`.
pub fn exact_gradient(
    quantities: &RegularizedQuantities,
    kind: DivergenceKind,
) -> Result<Array2<f64>> {
    let (ns, na) = quantities.a_tilde.dim();
    let lambda = quantities.lambda;
    let scale = 1.0 / (1.0 - quantities.gamma);
    let mut grad = Array2::zeros((ns, na));
    for s in 0..ns {
        let mut fprime = Array1::zeros(na);
        let mut mean_fprime = 0.0;
        for a in 0..na {
            let fp = f_eval(kind, quantities.ratio[[s, a]])?.first;
            fprime[a] = fp;
            mean_fprime += quantities.policy.probs[[s, a]] * fp;
        }
        let weight = quantities.d_u[s] * scale;
        for a in 0..na {
            grad[[s, a]] = weight
                * quantities.policy.probs[[s, a]]
                * (quantities.a_tilde[[s, a]] - lambda * (fprime[a] - mean_fprime));
        }
    }
    Ok(grad)
}

/// Frobenius norm of a gradient table.
pub fn grad_norm(grad: &Array2<f64>) -> f64 {
    grad.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Segment-dependent smoothness factor
/// `L_f = 8/(1-gamma)^3 (r_max + lambda sup ||f(w)||_inf
///        + lambda (1-gamma)(c_f1 + c_f2/2))`,
/// with the supremum over the segment `[theta, theta']` evaluated on a
/// uniform grid (endpoints included). The grid value can only undershoot the
/// true supremum; callers comparing against closed forms should take maxima
/// with the endpoint-based bounds.
#[allow(clippy::too_many_arguments)]
pub fn smoothness_factor(
    theta: &PolicyParams,
    theta_prime: &PolicyParams,
    kind: DivergenceKind,
    lambda: f64,
    constants: &DivergenceConstants,
    mdp: &Mdp,
    pi_ref: &PolicyTable,
    grid_points: usize,
) -> Result<f64> {
    if theta.theta.dim() != theta_prime.theta.dim() {
        return Err(Error::DimensionMismatch("logit tables differ".into()));
    }
    let grid = grid_points.max(2);
    let mut sup_f = 0.0f64;
    for i in 0..grid {
        let t = i as f64 / (grid - 1) as f64;
        let blend = PolicyParams::new(&theta.theta * (1.0 - t) + &theta_prime.theta * t)?;
        let table = policy_from_params(&blend)?;
        let w = ratio_table(&table, pi_ref)?;
        for &x in w.iter() {
            sup_f = sup_f.max(f_eval(kind, x)?.value.abs());
        }
    }
    let one_minus = 1.0 - mdp.gamma;
    Ok(8.0 / one_minus.powi(3)
        * (mdp.r_max
            + lambda * sup_f
            + lambda * one_minus * (constants.c_f1 + constants.c_f2 / 2.0)))
}

/// Closed-form smoothness factor for the forward KL regularizer:
/// `8 (r_max + lambda max{||ln pi||_inf, ||ln pi'||_inf}) / (1-gamma)^3`.
pub fn forward_kl_smoothness(
    theta: &PolicyParams,
    theta_prime: &PolicyParams,
    lambda: f64,
    mdp: &Mdp,
) -> Result<f64> {
    let log_inf = |p: &PolicyParams| -> Result<f64> {
        let table = policy_from_params(p)?;
        Ok(table
            .log_probs
            .iter()
            .map(|lp| lp.abs())
            .fold(0.0, f64::max))
    };
    let m = log_inf(theta)?.max(log_inf(theta_prime)?);
    Ok(8.0 * (mdp.r_max + lambda * m) / (1.0 - mdp.gamma).powi(3))
}

/// Uniform smoothness factor for the reverse KL regularizer:
/// `8 r_max/(1-gamma)^3 + lambda/(1-gamma)^2 (2 ln|A| + 4 ||ln pi_ref||_inf + 2)`.
pub fn reverse_kl_smoothness(lambda: f64, mdp: &Mdp, pi_ref: &PolicyTable) -> f64 {
    let log_ref_inf = pi_ref
        .log_probs
        .iter()
        .map(|lp| lp.abs())
        .fold(0.0, f64::max);
    8.0 * mdp.r_max / (1.0 - mdp.gamma).powi(3)
        + lambda / (1.0 - mdp.gamma).powi(2)
            * (2.0 * (mdp.num_actions as f64).ln() + 4.0 * log_ref_inf + 2.0)
}

/// Both sides of the gradient-domination inequality
/// `||grad||^2 >= 2 lambda c_u c_m (min pi)^2 ||d*_rho / d_u||_inf^{-1} gap`.
pub struct LojasiewiczSides {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn lojasiewicz_bound(
    quantities: &RegularizedQuantities,
    kind: DivergenceKind,
    constants: &DivergenceConstants,
    mdp: &Mdp,
    u: &InitialDistribution,
    pi_star: &PolicyTable,
    v_star: &Array1<f64>,
    rho: &InitialDistribution,
) -> Result<LojasiewiczSides> {
    let grad = exact_gradient(quantities, kind)?;
    let lhs = grad.iter().map(|g| g * g).sum::<f64>();

    let gap = v_star.dot(&rho.weights) - quantities.v.dot(&rho.weights);
    if gap < -1e-10 {
        return Err(Error::InvalidInput(format!(
            "optimality gap {gap:.3e} is negative: supplied policy is not optimal"
        )));
    }
    let d_star_rho = discounted_state_distribution(mdp, pi_star, rho)?;
    let mut ratio_inf = 0.0f64;
    for s in 0..mdp.num_states {
        ratio_inf = ratio_inf.max(d_star_rho[s] / quantities.d_u[s]);
    }
    let c_u = u.min_weight();
    let min_pi = quantities.policy.min_prob();
    let rhs = 2.0 * quantities.lambda * c_u * constants.c_m() * min_pi * min_pi * gap / ratio_inf;
    Ok(LojasiewiczSides { lhs, rhs, gap })
}

/// Projection of `q_tilde(s,.) - lambda f'(w_s)` onto the tangent space of
/// the simplex (`I - (1/|A|) 1 1^T`); orthogonal to the all-ones vector.
pub fn z_projected(
    quantities: &RegularizedQuantities,
    kind: DivergenceKind,
    s: usize,
) -> Result<Array1<f64>> {
    let na = quantities.a_tilde.ncols();
    if s >= quantities.a_tilde.nrows() {
        return Err(Error::InvalidInput(format!("state {s} out of range")));
    }
    let mut z = Array1::zeros(na);
    for a in 0..na {
        z[a] = quantities.q_tilde[[s, a]]
            - quantities.lambda * f_eval(kind, quantities.ratio[[s, a]])?.first;
    }
    let mean = z.sum() / na as f64;
    Ok(z - mean)
}

/// The computed step-budget constants for one outer iteration. `s_max` is
/// the cap on the sum of inner step sizes; the optional fields exist only
/// for the forward KL budget (`c_a`, `c_pi_floor`, `v0`) or when an optimal
/// policy is supplied (`lojasiewicz_c`).
#[derive(Debug, Clone, Serialize)]
pub struct StepBudget {
    pub regularizer: Regularizer,
    /// Bound on the absolute regularized advantage.
    pub a_max: f64,
    /// Inexact-direction growth constant.
    pub c_e: f64,
    /// Smoothness constant used by the budget.
    pub smooth_l: f64,
    /// Sum-of-step-sizes cap: min of the caps below.
    pub s_max: f64,
    pub caps: Vec<f64>,
    pub c_a: Option<f64>,
    pub c_pi_floor: Option<f64>,
    pub v0: Option<f64>,
    /// Per-outer-iteration contraction exponent of the optimality gap.
    pub lojasiewicz_c: Option<f64>,
}

/// Forward KL budget. `v0` is the value level the trajectory never drops
/// below, `v0 = value of the initial policy at u` when starting from the
/// reference policy. Supplying the optimal policy fills `lojasiewicz_c`.
#[allow(clippy::too_many_arguments)]
pub fn step_budget_forward_kl(
    mdp: &Mdp,
    pi_ref: &PolicyTable,
    lambda: f64,
    u: &InitialDistribution,
    eps_l: f64,
    eps_h: f64,
    v0: f64,
    pi_star: Option<&PolicyTable>,
) -> Result<StepBudget> {
    check_eps(eps_l, eps_h)?;
    let one_minus = 1.0 - mdp.gamma;
    let c_u = u.min_weight();
    let c_ref = pi_ref.min_prob();
    let reward_ceiling = mdp.r_max / one_minus;
    if v0 > reward_ceiling {
        return Err(Error::InvalidInput(format!(
            "v0 = {v0} exceeds r_max/(1-gamma) = {reward_ceiling}"
        )));
    }
    let c_a = (reward_ceiling - v0) / (lambda * c_u);
    let c_pi_floor = ((-c_a - (mdp.num_actions as f64).ln()) / c_ref).exp();
    let a_max = (mdp.r_max + lambda * c_a) / one_minus;
    let c_e =
        clip_mass_factor(eps_l, eps_h) * std::f64::consts::SQRT_2 * a_max + 3.0 * a_max + lambda;
    let smooth_l = 8.0
        * (mdp.r_max
            + lambda * std::f64::consts::LN_2
            + lambda * ((mdp.num_actions as f64).ln() + c_a) / c_ref)
        / one_minus.powi(3);
    let caps = vec![
        one_minus / (8.0 * c_e),
        one_minus * std::f64::consts::LN_2 / (4.0 * a_max + 8.0 * lambda),
        1.0 / (4.0 * smooth_l),
    ];
    let s_max = caps.iter().cloned().fold(f64::INFINITY, f64::min);

    let lojasiewicz_c = match pi_star {
        Some(star) => {
            let d_star_u = discounted_state_distribution(mdp, star, u)?;
            let mut ratio_inf = 0.0f64;
            for s in 0..mdp.num_states {
                ratio_inf = ratio_inf.max(d_star_u[s] / u.weights[s]);
            }
            Some(one_minus * lambda * s_max * c_u * c_ref * c_pi_floor * c_pi_floor / ratio_inf)
        }
        None => None,
    };

    Ok(StepBudget {
        regularizer: Regularizer::ForwardKl,
        a_max,
        c_e,
        smooth_l,
        s_max,
        caps,
        c_a: Some(c_a),
        c_pi_floor: Some(c_pi_floor),
        v0: Some(v0),
        lojasiewicz_c,
    })
}

/// Reverse KL budget, recomputed each outer iteration because the
/// inexactness constant depends on the anchor policy through
/// `max_{s,a} |ln(pi_ref/pi_n1)|`.
pub fn step_budget_reverse_kl(
    mdp: &Mdp,
    pi_ref: &PolicyTable,
    lambda: f64,
    pi_n1: &PolicyTable,
    eps_l: f64,
    eps_h: f64,
) -> Result<StepBudget> {
    check_eps(eps_l, eps_h)?;
    if pi_n1.probs.dim() != pi_ref.probs.dim() {
        return Err(Error::DimensionMismatch(
            "anchor and reference policies differ in shape".into(),
        ));
    }
    let one_minus = 1.0 - mdp.gamma;
    let c_ref = pi_ref.min_prob();
    let a_max = (mdp.r_max - lambda * c_ref.ln()) / one_minus;
    let max_log_ref_ratio = pi_ref
        .log_probs
        .iter()
        .zip(pi_n1.log_probs.iter())
        .map(|(lr, ln)| (lr - ln).abs())
        .fold(0.0, f64::max);
    let c_e = clip_mass_factor(eps_l, eps_h) * std::f64::consts::SQRT_2 * a_max
        + 3.0 * a_max
        + 3.0 * lambda * max_log_ref_ratio
        + 2.0 * lambda;
    let smooth_l = reverse_kl_smoothness(lambda, mdp, pi_ref);
    let caps = vec![one_minus / (8.0 * c_e), 1.0 / (4.0 * smooth_l)];
    let s_max = caps.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(StepBudget {
        regularizer: Regularizer::ReverseKl,
        a_max,
        c_e,
        smooth_l,
        s_max,
        caps,
        c_a: None,
        c_pi_floor: None,
        v0: None,
        lojasiewicz_c: None,
    })
}

/// `1/ln(1+eps_h) - 1/ln(1-eps_l)`; both terms positive.
fn clip_mass_factor(eps_l: f64, eps_h: f64) -> f64 {
    1.0 / (1.0 + eps_h).ln() - 1.0 / (1.0 - eps_l).ln()
}

fn check_eps(eps_l: f64, eps_h: f64) -> Result<()> {
    if !(eps_l > 0.0 && eps_l < 1.0) {
        return Err(Error::InvalidInput(format!(
            "eps_l {eps_l} must lie in (0,1)"
        )));
    }
    if !(eps_h > 0.0) {
        return Err(Error::InvalidInput(format!("eps_h {eps_h} must be > 0")));
    }
    Ok(())
}
