//! The deterministic double-loop PPO-Clip optimizer: forward-KL and
//! reverse-KL surrogate gradients, clip-region bookkeeping, and budgeted
//! step-size schedules.
//!
//! Each outer iteration freezes the anchor policy `pi_{n,1}` together with
//! its occupancy and advantage table; the inner loop takes `K` ascent steps
//! on the clipped surrogate whose step sizes sum to the budget `S_max`.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::eval::{
    evaluate_policy, exact_gradient, grad_norm, step_budget_forward_kl, step_budget_reverse_kl,
    RegularizedQuantities, Regularizer,
};
use crate::mdp::{InitialDistribution, Mdp};
use crate::policy::{policy_from_params, PolicyParams, PolicyTable};

/// How the per-outer step budget is split across the inner loop.
#[derive(Debug, Clone, PartialEq)]
pub enum StepSplit {
    Uniform,
    /// Nonnegative weights summing to 1, one per inner step.
    Custom(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct ClipConfig {
    pub eps_l: f64,
    pub eps_h: f64,
    pub lambda: f64,
    pub regularizer: Regularizer,
    /// Inner ascent steps per outer iteration (K).
    pub inner_steps: usize,
    /// Outer iterations (N). Zero logs the initial anchor without updating.
    pub outer_iters: usize,
    pub step_split: StepSplit,
    /// Multiplier on the budgeted step sum; values above 1 leave the
    /// regime the guarantees cover.
    pub step_scale: f64,
    /// Theory-off mode: fixed step sum per outer iteration, replacing the
    /// budget entirely.
    pub step_override: Option<f64>,
}

impl Default for ClipConfig {
    fn default() -> Self {
        ClipConfig {
            eps_l: 0.2,
            eps_h: 0.2,
            lambda: 0.1,
            regularizer: Regularizer::ForwardKl,
            inner_steps: 10,
            outer_iters: 100,
            step_split: StepSplit::Uniform,
            step_scale: 1.0,
            step_override: None,
        }
    }
}

impl ClipConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_l > 0.0 && self.eps_l < 1.0) {
            return Err(Error::InvalidInput(format!(
                "eps_l {} must lie in (0,1)",
                self.eps_l
            )));
        }
        if !(self.eps_h > 0.0) {
            return Err(Error::InvalidInput(format!(
                "eps_h {} must be > 0",
                self.eps_h
            )));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidInput(format!(
                "lambda {} must be > 0",
                self.lambda
            )));
        }
        if self.inner_steps == 0 {
            return Err(Error::InvalidInput("inner_steps must be >= 1".into()));
        }
        if !(self.step_scale > 0.0) {
            return Err(Error::InvalidInput(format!(
                "step_scale {} must be > 0",
                self.step_scale
            )));
        }
        if let StepSplit::Custom(w) = &self.step_split {
            if w.len() != self.inner_steps {
                return Err(Error::InvalidInput(format!(
                    "{} step weights for {} inner steps",
                    w.len(),
                    self.inner_steps
                )));
            }
            if w.iter().any(|&x| x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidInput(
                    "step weights must be nonnegative and sum to 1".into(),
                ));
            }
        }
        Ok(())
    }

    fn weights(&self) -> Vec<f64> {
        match &self.step_split {
            StepSplit::Uniform => vec![1.0 / self.inner_steps as f64; self.inner_steps],
            StepSplit::Custom(w) => w.clone(),
        }
    }
}

/// Quantities frozen at the start of an outer iteration and reused by every
/// inner step.
#[derive(Debug, Clone)]
pub struct Anchor {
    pub policy: PolicyTable,
    pub d_u: Array1<f64>,
    pub a_tilde: Array2<f64>,
}

impl Anchor {
    pub fn from_quantities(q: &RegularizedQuantities) -> Self {
        Anchor {
            policy: q.policy.clone(),
            d_u: q.d_u.clone(),
            a_tilde: q.a_tilde.clone(),
        }
    }
}

/// Non-clip mask: `{A >= 0, r <= 1+eps_h} union {A < 0, r >= 1-eps_l}`,
/// boundary inequalities non-strict. The clipped region is the complement.
pub fn clip_regions(
    a_tilde: &Array2<f64>,
    ratio: &Array2<f64>,
    eps_l: f64,
    eps_h: f64,
) -> Array2<bool> {
    Array2::from_shape_fn(a_tilde.dim(), |(s, a)| {
        let adv = a_tilde[[s, a]];
        let r = ratio[[s, a]];
        if adv >= 0.0 {
            r <= 1.0 + eps_h
        } else {
            r >= 1.0 - eps_l
        }
    })
}

/// Gradient of the clipped surrogate at `theta`, plus the anchor-probability
/// mass of the clipped pairs.
pub struct SurrogateGradient {
    pub grad: Array2<f64>,
    pub clip_mass: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn surrogate_gradient(
    theta: &PolicyParams,
    anchor: &Anchor,
    pi_ref: &PolicyTable,
    regularizer: Regularizer,
    lambda: f64,
    eps_l: f64,
    eps_h: f64,
    gamma: f64,
) -> Result<SurrogateGradient> {
    let (ns, na) = anchor.a_tilde.dim();
    if theta.theta.dim() != (ns, na) || pi_ref.probs.dim() != (ns, na) {
        return Err(Error::DimensionMismatch(format!(
            "theta {:?} / reference {:?} vs anchor ({ns}, {na})",
            theta.theta.dim(),
            pi_ref.probs.dim()
        )));
    }
    let current = policy_from_params(theta)?;
    // Ratios in log space: r = pi_theta / pi_{n,1}, r_ref = pi_ref / pi_{n,1}.
    let ratio = Array2::from_shape_fn((ns, na), |(s, a)| {
        (current.log_probs[[s, a]] - anchor.policy.log_probs[[s, a]]).exp()
    });
    let mask = clip_regions(&anchor.a_tilde, &ratio, eps_l, eps_h);

    let scale = 1.0 / (1.0 - gamma);
    let mut grad = Array2::zeros((ns, na));
    let mut clip_mass = 0.0;
    for s in 0..ns {
        // c(s,a) = 1_N r A + regularizer term; the state gradient is
        // sum_a pi_{n,1}(a) c(a) (e_a - pi_theta(s)).
        let mut c = Array1::zeros(na);
        for a in 0..na {
            let clip_term = if mask[[s, a]] {
                ratio[[s, a]] * anchor.a_tilde[[s, a]]
            } else {
                clip_mass += anchor.d_u[s] * anchor.policy.probs[[s, a]];
                0.0
            };
            let reg_term = match regularizer {
                Regularizer::ForwardKl => {
                    lambda * (pi_ref.log_probs[[s, a]] - anchor.policy.log_probs[[s, a]]).exp()
                }
                Regularizer::ReverseKl => {
                    -lambda * ratio[[s, a]] * (current.log_probs[[s, a]] - pi_ref.log_probs[[s, a]])
                }
            };
            c[a] = clip_term + reg_term;
        }
        let mut weighted_sum = 0.0;
        for a in 0..na {
            weighted_sum += anchor.policy.probs[[s, a]] * c[a];
        }
        let w = anchor.d_u[s] * scale;
        for a in 0..na {
            grad[[s, a]] =
                w * (anchor.policy.probs[[s, a]] * c[a] - current.probs[[s, a]] * weighted_sum);
        }
    }
    Ok(SurrogateGradient { grad, clip_mass })
}

/// One outer iteration's log entry. The first eight fields are the CSV
/// schema; the rest are per-trajectory audit quantities.
#[derive(Debug, Clone)]
pub struct IterateRecord {
    pub n: usize,
    pub value_u: f64,
    pub value_rho: f64,
    pub grad_norm: f64,
    /// Optimality gap at u, absent when no oracle value was supplied.
    pub delta_n: Option<f64>,
    /// Smallest anchor-policy probability.
    pub min_policy: f64,
    /// Step sum actually applied this outer iteration.
    pub s_max_n: f64,
    /// Mean over inner steps of the clipped anchor mass.
    pub clip_fraction: f64,
    /// Smallest policy probability across all inner iterates of this outer
    /// iteration (including the final one).
    pub min_policy_inner: f64,
    /// Frobenius distance between the first inner surrogate gradient and the
    /// exact gradient at the anchor.
    pub anchor_gap: f64,
    /// max_k ||g_{n,k} - grad|| / ||grad|| over the inner loop.
    pub max_rel_inexactness: f64,
    /// Largest absolute anchor advantage.
    pub a_tilde_max_abs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct IterateLog {
    pub records: Vec<IterateRecord>,
}

pub struct RunOutcome {
    pub theta: PolicyParams,
    pub log: IterateLog,
}

/// Runs PPO-Clip from the reference policy.
pub fn run(
    mdp: &Mdp,
    pi_ref: &PolicyTable,
    u: &InitialDistribution,
    rho: &InitialDistribution,
    config: &ClipConfig,
    v_star_u: Option<f64>,
) -> Result<RunOutcome> {
    run_from(mdp, pi_ref, &pi_ref.logits(), u, rho, config, v_star_u)
}

/// Runs PPO-Clip from arbitrary initial logits. The forward-KL step budget
/// is derived once from the initial value level and reused, matching the
/// guarantee's fixed budget; the reverse-KL budget is recomputed every
/// outer iteration.
pub fn run_from(
    mdp: &Mdp,
    pi_ref: &PolicyTable,
    theta0: &PolicyParams,
    u: &InitialDistribution,
    rho: &InitialDistribution,
    config: &ClipConfig,
    v_star_u: Option<f64>,
) -> Result<RunOutcome> {
    config.validate()?;
    let kind = config.regularizer.divergence();
    let mut theta = theta0.clone();
    let weights = config.weights();
    let mut log = IterateLog::default();

    // Forward-KL budget is fixed by the starting value level.
    let fkl_budget = match config.regularizer {
        Regularizer::ForwardKl => {
            let policy = policy_from_params(&theta)?;
            let q0 = evaluate_policy(mdp, &policy, pi_ref, kind, config.lambda, u)?;
            Some(step_budget_forward_kl(
                mdp,
                pi_ref,
                config.lambda,
                u,
                config.eps_l,
                config.eps_h,
                q0.value_at(u),
                None,
            )?)
        }
        Regularizer::ReverseKl => None,
    };

    let outer_iters = config.outer_iters;
    let mut n = 1usize;
    loop {
        let policy = policy_from_params(&theta)?;
        let quantities = evaluate_policy(mdp, &policy, pi_ref, kind, config.lambda, u)?;
        let g_exact = exact_gradient(&quantities, kind)?;
        let g_exact_norm = grad_norm(&g_exact);

        let budget_s_max = match config.regularizer {
            Regularizer::ForwardKl => fkl_budget.as_ref().unwrap().s_max,
            Regularizer::ReverseKl => {
                step_budget_reverse_kl(
                    mdp,
                    pi_ref,
                    config.lambda,
                    &policy,
                    config.eps_l,
                    config.eps_h,
                )?
                .s_max
            }
        };
        let step_sum = config
            .step_override
            .unwrap_or(budget_s_max * config.step_scale);

        let value_u = quantities.value_at(u);
        let value_rho = quantities.v.dot(&rho.weights);
        let a_tilde_max_abs = quantities
            .a_tilde
            .iter()
            .map(|x| x.abs())
            .fold(0.0, f64::max);
        let mut record = IterateRecord {
            n,
            value_u,
            value_rho,
            grad_norm: g_exact_norm,
            delta_n: v_star_u.map(|vs| vs - value_u),
            min_policy: policy.min_prob(),
            s_max_n: step_sum,
            clip_fraction: 0.0,
            min_policy_inner: policy.min_prob(),
            anchor_gap: 0.0,
            max_rel_inexactness: 0.0,
            a_tilde_max_abs,
        };

        if outer_iters == 0 {
            log.records.push(record);
            break;
        }

        let anchor = Anchor::from_quantities(&quantities);
        let mut clip_mass_sum = 0.0;
        for (k, weight) in weights.iter().enumerate() {
            let sg = surrogate_gradient(
                &theta,
                &anchor,
                pi_ref,
                config.regularizer,
                config.lambda,
                config.eps_l,
                config.eps_h,
                mdp.gamma,
            )?;
            let gap = grad_norm(&(&sg.grad - &g_exact));
            if k == 0 {
                record.anchor_gap = gap;
            }
            if g_exact_norm > 0.0 {
                record.max_rel_inexactness = record.max_rel_inexactness.max(gap / g_exact_norm);
            }
            clip_mass_sum += sg.clip_mass;

            theta = PolicyParams {
                theta: &theta.theta + &(step_sum * weight * &sg.grad),
            };
            if theta.theta.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteParams {
                    outer: n,
                    inner: k + 1,
                });
            }
            record.min_policy_inner = record
                .min_policy_inner
                .min(policy_from_params(&theta)?.min_prob());
        }
        record.clip_fraction = clip_mass_sum / config.inner_steps as f64;
        log.records.push(record);

        if n == outer_iters {
            break;
        }
        n += 1;
    }

    Ok(RunOutcome { theta, log })
}
