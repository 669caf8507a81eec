//! Independent computation of the regularized optimal policy and value:
//! log-sum-exp soft value iteration for the reverse KL regularizer, and
//! generic regularized value iteration for any supported generator.
//!
//! The generic path solves each state's maximization
//! `max_{p in simplex} p.q - lambda D_f(p, pi_ref(s))` exactly through the
//! stationarity system `f'(p_a/q_a) = (q_a_value - nu)/lambda`: `f'` is
//! strictly increasing for every supported generator, so `p_a(nu)` is
//! monotone and the simplex constraint pins `nu` by bisection. This keeps
//! the oracle independent of any gradient machinery in the crate.

use ndarray::{Array1, Array2};

use crate::divergence::{divergence_value, DivergenceKind};
use crate::error::{Error, Result};
use crate::mdp::Mdp;
use crate::policy::{policy_from_params, PolicyParams, PolicyTable};

/// Default sup-norm Bellman residual target.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Sweep cap; contraction at desk scale converges far earlier.
pub const MAX_SWEEPS: usize = 1_000_000;

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub pi_star: PolicyTable,
    pub v_star: Array1<f64>,
    /// Final sup-norm Bellman residual.
    pub residual: f64,
    pub iterations: usize,
}

/// Soft value iteration for the reverse KL regularizer:
/// `T[V](s) = lambda ln sum_a pi_ref(a|s) exp((r(s,a) + gamma sum P V)/lambda)`
/// with the optimal policy recovered as the softmax of
/// `ln pi_ref + q/lambda`.
pub fn soft_value_iteration(
    mdp: &Mdp,
    pi_ref: &PolicyTable,
    lambda: f64,
    tol: f64,
) -> Result<OracleResult> {
    check_inputs(mdp, pi_ref, lambda, tol)?;
    let sweep = |v: &Array1<f64>| -> Array1<f64> {
        let q = q_from_value(mdp, v);
        Array1::from_shape_fn(mdp.num_states, |s| {
            // lambda * ln sum_a pi_ref exp(q/lambda), factored around the top
            // Q-value: q* + lambda ln(1 + sum_a pi_ref expm1((q_a - q*)/lambda)).
            // The expm1/ln_1p form avoids the cancellation that would
            // otherwise cap the achievable residual at lambda * eps.
            let mut q_star = f64::NEG_INFINITY;
            for a in 0..mdp.num_actions {
                q_star = q_star.max(q[[s, a]]);
            }
            let mut sum_m1 = 0.0;
            for a in 0..mdp.num_actions {
                sum_m1 += pi_ref.probs[[s, a]] * ((q[[s, a]] - q_star) / lambda).exp_m1();
            }
            q_star + lambda * sum_m1.ln_1p()
        })
    };
    let (v_star, residual, iterations) = fixed_point(mdp, tol, sweep)?;
    let q = q_from_value(mdp, &v_star);
    let logits = Array2::from_shape_fn((mdp.num_states, mdp.num_actions), |(s, a)| {
        pi_ref.log_probs[[s, a]] + q[[s, a]] / lambda
    });
    let pi_star = policy_from_params(&PolicyParams::new(logits)?)?;
    Ok(OracleResult {
        pi_star,
        v_star,
        residual,
        iterations,
    })
}

/// Regularized value iteration for any supported generator. Each sweep
/// solves every state's strongly concave simplex maximization exactly.
pub fn general_regularized_vi(
    mdp: &Mdp,
    pi_ref: &PolicyTable,
    kind: DivergenceKind,
    lambda: f64,
    tol: f64,
) -> Result<OracleResult> {
    check_inputs(mdp, pi_ref, lambda, tol)?;
    kind.validate()?;
    let mut maximizers = Array2::zeros((mdp.num_states, mdp.num_actions));
    let sweep_store = |v: &Array1<f64>, maximizers: &mut Array2<f64>| -> Result<Array1<f64>> {
        let q = q_from_value(mdp, v);
        let mut out = Array1::zeros(mdp.num_states);
        for s in 0..mdp.num_states {
            let q_row = q.row(s).to_owned();
            let ref_row = pi_ref.probs.row(s).to_owned();
            let p = simplex_maximizer(&q_row, &ref_row, kind, lambda).map_err(|e| match e {
                Error::InnerSolveStall {
                    gradient_mapping, ..
                } => Error::InnerSolveStall {
                    state: s,
                    gradient_mapping,
                },
                other => other,
            })?;
            let d = divergence_value(kind, &p, &ref_row)?;
            out[s] = p.dot(&q_row) - lambda * d;
            for a in 0..mdp.num_actions {
                maximizers[[s, a]] = p[a];
            }
        }
        Ok(out)
    };

    // Fixed-point loop with the maximizers of the final sweep retained.
    let inner_target = (tol * (1.0 - mdp.gamma) / 4.0).min(tol);
    let mut v = Array1::zeros(mdp.num_states);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < MAX_SWEEPS {
        let next = sweep_store(&v, &mut maximizers)?;
        residual = (&next - &v).iter().map(|x| x.abs()).fold(0.0, f64::max);
        v = next;
        iterations += 1;
        if residual <= inner_target {
            break;
        }
    }
    if residual > inner_target {
        return Err(Error::NoConvergence {
            max_iterations: MAX_SWEEPS,
            residual,
        });
    }
    let pi_star = table_from_maximizers(&maximizers);
    Ok(OracleResult {
        pi_star,
        v_star: v,
        residual,
        iterations,
    })
}

/// Plain Bellman optimality iteration (no regularizer); cross-check for the
/// small-lambda limit.
pub fn unregularized_value_iteration(mdp: &Mdp, tol: f64) -> Result<(Array1<f64>, f64, usize)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput("tolerance must be > 0".into()));
    }
    let sweep = |v: &Array1<f64>| -> Array1<f64> {
        let q = q_from_value(mdp, v);
        Array1::from_shape_fn(mdp.num_states, |s| {
            q.row(s).iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        })
    };
    fixed_point(mdp, tol, sweep)
}

fn fixed_point<F>(mdp: &Mdp, tol: f64, sweep: F) -> Result<(Array1<f64>, f64, usize)>
where
    F: Fn(&Array1<f64>) -> Array1<f64>,
{
    // Iterate past the requested residual so the value error itself, which
    // is bounded by residual/(1-gamma), stays below tol/4.
    let inner_target = (tol * (1.0 - mdp.gamma) / 4.0).min(tol);
    let mut v = Array1::zeros(mdp.num_states);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < MAX_SWEEPS {
        let next = sweep(&v);
        residual = (&next - &v).iter().map(|x| x.abs()).fold(0.0, f64::max);
        v = next;
        iterations += 1;
        if residual <= inner_target {
            return Ok((v, residual, iterations));
        }
    }
    Err(Error::NoConvergence {
        max_iterations: MAX_SWEEPS,
        residual,
    })
}

fn q_from_value(mdp: &Mdp, v: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((mdp.num_states, mdp.num_actions), |(s, a)| {
        let mut continuation = 0.0;
        for s2 in 0..mdp.num_states {
            continuation += mdp.transition[[s, a, s2]] * v[s2];
        }
        mdp.reward[[s, a]] + mdp.gamma * continuation
    })
}

fn table_from_maximizers(p: &Array2<f64>) -> PolicyTable {
    // Build log-probs directly; maximizer entries may be exactly zero
    // (chi^2), where the log-prob is -inf only formally — store a very
    // negative value to keep downstream arithmetic finite.
    let log_probs = p.mapv(|x| if x > 0.0 { x.ln() } else { -1e30 });
    PolicyTable {
        probs: p.clone(),
        log_probs,
    }
}

/// Exact maximizer of `p.q - lambda D_f(p, q_ref)` over the simplex via
/// bisection on the equality multiplier `nu`:
/// `p_a(nu) = q_ref_a * g((q_a - nu)/lambda)` with `g = (f')^{-1}`, which is
/// nonincreasing in `nu`; `nu` is pinned by `sum_a p_a(nu) = 1`.
pub fn simplex_maximizer(
    q: &Array1<f64>,
    q_ref: &Array1<f64>,
    kind: DivergenceKind,
    lambda: f64,
) -> Result<Array1<f64>> {
    let na = q.len();
    if q_ref.len() != na || na == 0 {
        return Err(Error::DimensionMismatch("q and q_ref differ".into()));
    }
    let q_max = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    // Upper limit of f' (argument domain of g); nu must stay above
    // q_max - lambda * t_sup to keep every coordinate inside the domain.
    let t_sup = match kind {
        DivergenceKind::ForwardKl => 0.0,
        DivergenceKind::Js => std::f64::consts::LN_2,
        DivergenceKind::Alpha(a) => 1.0 / a,
        DivergenceKind::ReverseKl | DivergenceKind::Chi2 => f64::INFINITY,
    };

    let total = |nu: f64| -> f64 {
        let mut sum = 0.0;
        for a in 0..na {
            sum += q_ref[a] * g_inverse(kind, (q[a] - nu) / lambda);
        }
        sum
    };

    // Bracket nu: above, all coordinates shrink to 0; below (toward the
    // domain edge), the top coordinate blows up.
    let mut hi = q_max + lambda;
    while total(hi) > 1.0 {
        hi = q_max + 2.0 * (hi - q_max);
        if !hi.is_finite() {
            return Err(Error::InnerSolveStall {
                state: usize::MAX,
                gradient_mapping: f64::INFINITY,
            });
        }
    }
    let mut lo = if t_sup.is_finite() {
        // Walk toward the domain edge, where the top coordinate blows up,
        // until the mass exceeds 1.
        let edge = q_max - lambda * t_sup;
        let mut gap = lambda.min(1.0);
        let mut candidate = edge + gap;
        let mut tries = 0;
        while candidate > edge && total(candidate) < 1.0 && tries < 2000 {
            gap *= 0.5;
            candidate = edge + gap;
            tries += 1;
        }
        candidate
    } else {
        let mut below = q_max - lambda.max(1.0);
        let mut width = 2.0 * (q_max - below).max(1.0);
        while total(below) < 1.0 {
            below -= width;
            width *= 2.0;
            if !below.is_finite() {
                return Err(Error::InnerSolveStall {
                    state: usize::MAX,
                    gradient_mapping: f64::INFINITY,
                });
            }
        }
        below
    };

    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if total(mid) >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let nu = 0.5 * (lo + hi);
    let mut p = Array1::from_shape_fn(na, |a| q_ref[a] * g_inverse(kind, (q[a] - nu) / lambda));
    let sum = p.sum();
    if !(sum > 0.0) || !sum.is_finite() {
        return Err(Error::InnerSolveStall {
            state: usize::MAX,
            gradient_mapping: (sum - 1.0).abs(),
        });
    }
    p.mapv_inplace(|x| x / sum);
    Ok(p)
}

/// Inverse of the generator derivative, clamped to the feasible orthant.
fn g_inverse(kind: DivergenceKind, t: f64) -> f64 {
    match kind {
        // f'(x) = ln x + 1
        DivergenceKind::ReverseKl => (t - 1.0).exp(),
        // f'(x) = -1/x, domain t < 0
        DivergenceKind::ForwardKl => {
            if t < 0.0 {
                -1.0 / t
            } else {
                f64::INFINITY
            }
        }
        // f'(x) = ln(2x/(1+x)), domain t < ln 2
        DivergenceKind::Js => {
            let e = t.exp();
            if e < 2.0 {
                e / (2.0 - e)
            } else {
                f64::INFINITY
            }
        }
        // f'(x) = (1 - x^{-a})/a, domain t < 1/a
        DivergenceKind::Alpha(a) => {
            let base = 1.0 - a * t;
            if base > 0.0 {
                base.powf(-1.0 / a)
            } else {
                f64::INFINITY
            }
        }
        // f'(x) = 2(x-1); mass pinned at zero below f'(0) = -2
        DivergenceKind::Chi2 => (1.0 + t / 2.0).max(0.0),
    }
}

fn check_inputs(mdp: &Mdp, pi_ref: &PolicyTable, lambda: f64, tol: f64) -> Result<()> {
    if pi_ref.probs.dim() != (mdp.num_states, mdp.num_actions) {
        return Err(Error::DimensionMismatch(format!(
            "reference policy {:?} vs MDP ({}, {})",
            pi_ref.probs.dim(),
            mdp.num_states,
            mdp.num_actions
        )));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!("lambda {lambda} must be > 0")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tol {tol} must be > 0")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::DivergenceKind;
    use crate::eval::evaluate_policy;
    use crate::mdp::{random_mdp, DistributionRole, InitialDistribution, Mdp};
    use crate::testutil::random_theta;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2, Array3};

    fn uniform_ref(ns: usize, na: usize) -> PolicyTable {
        policy_from_params(&PolicyParams::new(Array2::zeros((ns, na))).unwrap()).unwrap()
    }

    #[test]
    fn huge_lambda_recovers_reference_policy() {
        let mdp = random_mdp(2, 3, 3, 1.0, 0.9).unwrap();
        let pi_ref = policy_from_params(&random_theta(5, 3, 3)).unwrap();
        let out = soft_value_iteration(&mdp, &pi_ref, 1e6, 1e-10).unwrap();
        let mut tv = 0.0f64;
        for s in 0..3 {
            let mut acc = 0.0;
            for a in 0..3 {
                acc += (out.pi_star.probs[[s, a]] - pi_ref.probs[[s, a]]).abs();
            }
            tv = tv.max(0.5 * acc);
        }
        assert!(tv <= 1e-4, "total variation {tv}");
    }

    #[test]
    fn single_action_matches_policy_evaluation() {
        let mdp = random_mdp(4, 3, 1, 1.0, 0.9).unwrap();
        let pi_ref = uniform_ref(3, 1);
        let u = InitialDistribution::uniform(3, DistributionRole::GradientEval);
        let out = soft_value_iteration(&mdp, &pi_ref, 0.5, 1e-10).unwrap();
        let q =
            evaluate_policy(&mdp, &pi_ref, &pi_ref, DivergenceKind::ReverseKl, 0.5, &u).unwrap();
        for s in 0..3 {
            assert_abs_diff_eq!(out.v_star[s], q.v[s], epsilon = 1e-9);
        }
    }

    #[test]
    fn optimal_policy_dominates_reference_floor() {
        let mdp = random_mdp(6, 4, 3, 1.0, 0.9).unwrap();
        let pi_ref = policy_from_params(&random_theta(7, 4, 3)).unwrap();
        let lambda = 0.1;
        let out = soft_value_iteration(&mdp, &pi_ref, lambda, 1e-10).unwrap();
        let c_ref = pi_ref.min_prob();
        let a_max = (mdp.r_max - lambda * c_ref.ln()) / (1.0 - mdp.gamma);
        for s in 0..4 {
            for a in 0..3 {
                let floor = pi_ref.probs[[s, a]] * (-a_max / lambda).exp();
                assert!(
                    out.pi_star.probs[[s, a]] >= floor,
                    "pi* {} below floor {}",
                    out.pi_star.probs[[s, a]],
                    floor
                );
            }
        }
    }

    #[test]
    fn general_vi_agrees_with_soft_vi_on_reverse_kl() {
        let tol = 1e-10;
        let mdp = random_mdp(8, 4, 3, 1.0, 0.9).unwrap();
        let pi_ref = policy_from_params(&random_theta(9, 4, 3)).unwrap();
        let soft = soft_value_iteration(&mdp, &pi_ref, 0.1, tol).unwrap();
        let gen =
            general_regularized_vi(&mdp, &pi_ref, DivergenceKind::ReverseKl, 0.1, tol).unwrap();
        for s in 0..4 {
            assert!((soft.v_star[s] - gen.v_star[s]).abs() <= 10.0 * tol);
        }
    }

    #[test]
    fn single_state_chi2_matches_grid_search() {
        // gamma = 0 decouples the state: the oracle value is the plain
        // single-step simplex maximization.
        let mdp = Mdp::new(
            Array3::from_shape_fn((1, 2, 1), |_| 1.0),
            Array2::from_shape_fn((1, 2), |(_, a)| if a == 0 { 0.9 } else { 0.2 }),
            0.0,
            1.0,
        )
        .unwrap();
        let pi_ref = uniform_ref(1, 2);
        let lambda = 0.3;
        let out =
            general_regularized_vi(&mdp, &pi_ref, DivergenceKind::Chi2, lambda, 1e-10).unwrap();

        let mut best = f64::NEG_INFINITY;
        let mut best_p = 0.0;
        let mut p0 = 0.0;
        while p0 <= 1.0 {
            let p = array![p0, 1.0 - p0];
            let d = divergence_value(DivergenceKind::Chi2, &p, &pi_ref.probs.row(0).to_owned())
                .unwrap();
            let val = 0.9 * p0 + 0.2 * (1.0 - p0) - lambda * d;
            if val > best {
                best = val;
                best_p = p0;
            }
            p0 += 1e-5;
        }
        assert!((out.v_star[0] - best).abs() <= 1e-8);
        assert!((out.pi_star.probs[[0, 0]] - best_p).abs() <= 1e-4);
    }

    #[test]
    fn small_lambda_approaches_unregularized_optimum() {
        let mdp = random_mdp(10, 4, 3, 1.0, 0.9).unwrap();
        let pi_ref = uniform_ref(4, 3);
        let (v_plain, _, _) = unregularized_value_iteration(&mdp, 1e-10).unwrap();
        for kind in DivergenceKind::all_default() {
            let out = general_regularized_vi(&mdp, &pi_ref, kind, 1e-6, 1e-10).unwrap();
            for s in 0..4 {
                assert!(
                    (out.v_star[s] - v_plain[s]).abs() <= 1e-3,
                    "{kind}: {} vs {}",
                    out.v_star[s],
                    v_plain[s]
                );
            }
        }
    }

    #[test]
    fn optimal_value_dominates_random_policies() {
        let mdp = random_mdp(12, 3, 3, 1.0, 0.9).unwrap();
        let pi_ref = policy_from_params(&random_theta(13, 3, 3)).unwrap();
        let u = InitialDistribution::uniform(3, DistributionRole::GradientEval);
        for kind in DivergenceKind::all_default() {
            let out = general_regularized_vi(&mdp, &pi_ref, kind, 0.2, 1e-10).unwrap();
            for trial in 0..100u64 {
                let theta = random_theta(1000 + trial, 3, 3);
                let q = evaluate(&mdp, &theta, &pi_ref, kind, 0.2, &u).unwrap();
                for s in 0..3 {
                    assert!(
                        out.v_star[s] >= q.v[s] - 1e-8,
                        "{kind} trial {trial} state {s}: {} < {}",
                        out.v_star[s],
                        q.v[s]
                    );
                }
            }
        }
    }

    use crate::eval::evaluate;

    #[test]
    fn bellman_residual_is_reported_below_tolerance() {
        let mdp = random_mdp(14, 5, 2, 1.0, 0.95).unwrap();
        let pi_ref = uniform_ref(5, 2);
        let tol = 1e-10;
        let soft = soft_value_iteration(&mdp, &pi_ref, 0.05, tol).unwrap();
        assert!(soft.residual <= tol);
        let gen =
            general_regularized_vi(&mdp, &pi_ref, DivergenceKind::Alpha(0.5), 0.05, tol).unwrap();
        assert!(gen.residual <= tol);
        assert!(gen.iterations > 0 && gen.iterations < MAX_SWEEPS);
    }
}
