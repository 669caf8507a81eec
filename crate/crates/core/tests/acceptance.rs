//! Acceptance suite: every release gate runs here at its stated tolerance
//! and prints one PASS line (run with `--nocapture` to see them). A failed
//! assertion is the corresponding FAIL line.

use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ppoclip::checks::{check_lojasiewicz, check_score_bounds, check_smoothness, log_linear_fit};
use ppoclip::divergence::{divergence_value, DivergenceKind};
use ppoclip::eval::{
    evaluate, evaluate_policy, exact_gradient, step_budget_forward_kl, Regularizer,
};
use ppoclip::mdp::{
    discounted_state_distribution, random_mdp, DistributionRole, InitialDistribution, Mdp,
};
use ppoclip::oracle::{
    general_regularized_vi, soft_value_iteration, unregularized_value_iteration,
};
use ppoclip::policy::{policy_from_params, PolicyParams, PolicyTable};
use ppoclip::ppo::{run_from, ClipConfig, StepSplit};

fn pass(name: &str, detail: String) {
    println!("[acceptance] PASS {name} ({detail})");
}

fn uniform_ref(ns: usize, na: usize) -> PolicyTable {
    policy_from_params(&PolicyParams::new(Array2::zeros((ns, na))).unwrap()).unwrap()
}

fn random_theta(rng: &mut ChaCha8Rng, ns: usize, na: usize) -> PolicyParams {
    PolicyParams::new(Array2::from_shape_fn((ns, na), |_| {
        rng.gen_range(-3.0..3.0)
    }))
    .unwrap()
}

/// Gradient correctness: the exact gradient matches central finite
/// differences (step 1e-5, relative error <= 1e-6 against max(1, inf-norm))
/// on 100 random instances for all five generators.
#[test]
fn gradient_matches_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let lambdas = [0.01, 0.1, 1.0];
    let h = 1e-5;
    let mut worst_rel = 0.0f64;
    for instance in 0..100u64 {
        let ns = rng.gen_range(2..=5);
        let na = rng.gen_range(2..=4);
        let gamma = rng.gen_range(0.8..=0.95);
        let mdp = random_mdp(instance, ns, na, 1.0, gamma).unwrap();
        let theta = random_theta(&mut rng, ns, na);
        let pi_ref = policy_from_params(&random_theta(&mut rng, ns, na)).unwrap();
        let u = InitialDistribution::uniform(ns, DistributionRole::GradientEval);
        let lambda = lambdas[instance as usize % lambdas.len()];
        for kind in DivergenceKind::all_default() {
            let q = evaluate(&mdp, &theta, &pi_ref, kind, lambda, &u).unwrap();
            let g = exact_gradient(&q, kind).unwrap();
            let g_inf = g.iter().map(|x| x.abs()).fold(0.0f64, f64::max);
            for s in 0..ns {
                for a in 0..na {
                    let mut plus = theta.clone();
                    plus.theta[[s, a]] += h;
                    let mut minus = theta.clone();
                    minus.theta[[s, a]] -= h;
                    let vp = evaluate(&mdp, &plus, &pi_ref, kind, lambda, &u)
                        .unwrap()
                        .value_at(&u);
                    let vm = evaluate(&mdp, &minus, &pi_ref, kind, lambda, &u)
                        .unwrap()
                        .value_at(&u);
                    let fd = (vp - vm) / (2.0 * h);
                    let rel = (fd - g[[s, a]]).abs() / g_inf.max(1.0);
                    worst_rel = worst_rel.max(rel);
                    assert!(
                        rel <= 1e-6,
                        "instance {instance} {kind} ({s},{a}): relative error {rel:.3e}"
                    );
                }
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() <= 60, "took {elapsed:?}, budget 60s");
    pass(
        "gradient-correctness",
        format!("100 instances x 5 divergences, worst rel err {worst_rel:.3e}, {elapsed:?}"),
    );
}

/// Identity suite: the performance-difference identity holds to 1e-9 over
/// 100 random policy pairs, and the per-state optimality bracket against the
/// oracle policy is nonnegative to 1e-10.
#[test]
fn performance_difference_and_suboptimality_identities() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(515);
    let kinds = DivergenceKind::all_default();
    let mut worst_gap = 0.0f64;
    for trial in 0..100u64 {
        let ns = 3 + (trial as usize % 3);
        let na = 2 + (trial as usize % 3);
        let gamma = rng.gen_range(0.8..=0.95);
        let mdp = random_mdp(trial, ns, na, 1.0, gamma).unwrap();
        let pi_ref = policy_from_params(&random_theta(&mut rng, ns, na)).unwrap();
        let kind = kinds[trial as usize % kinds.len()];
        let lambda = [0.01, 0.1, 1.0][trial as usize % 3];
        let u = InitialDistribution::uniform(ns, DistributionRole::GradientEval);
        let rho = InitialDistribution::uniform(ns, DistributionRole::Reporting);

        let pi1 = policy_from_params(&random_theta(&mut rng, ns, na)).unwrap();
        let pi2 = policy_from_params(&random_theta(&mut rng, ns, na)).unwrap();
        let q1 = evaluate_policy(&mdp, &pi1, &pi_ref, kind, lambda, &u).unwrap();
        let q2 = evaluate_policy(&mdp, &pi2, &pi_ref, kind, lambda, &u).unwrap();
        let lhs = q1.v.dot(&rho.weights) - q2.v.dot(&rho.weights);
        let d1_rho = discounted_state_distribution(&mdp, &pi1, &rho).unwrap();
        let mut rhs = 0.0;
        for s in 0..ns {
            let mut inner = 0.0;
            for a in 0..na {
                inner += (pi1.probs[[s, a]] - pi2.probs[[s, a]]) * q2.q_tilde[[s, a]];
            }
            inner -= lambda * (q1.divergence[s] - q2.divergence[s]);
            rhs += d1_rho[s] * inner;
        }
        rhs /= 1.0 - mdp.gamma;
        let gap = (lhs - rhs).abs();
        worst_gap = worst_gap.max(gap);
        assert!(gap <= 1e-9, "trial {trial} {kind}: |lhs-rhs| = {gap:.3e}");
    }

    // Optimality bracket against the oracle policy.
    let mut worst_w = f64::INFINITY;
    for trial in 0..20u64 {
        let mdp = random_mdp(900 + trial, 3, 3, 1.0, 0.9).unwrap();
        let pi_ref = policy_from_params(&random_theta(&mut rng, 3, 3)).unwrap();
        let kind = kinds[trial as usize % kinds.len()];
        let lambda = [0.05, 0.1, 0.5][trial as usize % 3];
        let u = InitialDistribution::uniform(3, DistributionRole::GradientEval);
        let oracle = general_regularized_vi(&mdp, &pi_ref, kind, lambda, 1e-11).unwrap();
        let div_star: Vec<f64> = (0..3)
            .map(|s| {
                divergence_value(
                    kind,
                    &oracle.pi_star.probs.row(s).to_owned(),
                    &pi_ref.probs.row(s).to_owned(),
                )
                .unwrap()
            })
            .collect();
        let pi = policy_from_params(&random_theta(&mut rng, 3, 3)).unwrap();
        let q = evaluate_policy(&mdp, &pi, &pi_ref, kind, lambda, &u).unwrap();
        #[allow(clippy::needless_range_loop)]
        for s in 0..3 {
            let mut w = 0.0;
            for a in 0..3 {
                let mut continuation = 0.0;
                for s2 in 0..3 {
                    continuation += mdp.transition[[s, a, s2]] * oracle.v_star[s2];
                }
                let q_star = mdp.reward[[s, a]] - lambda * div_star[s] + mdp.gamma * continuation;
                w += (oracle.pi_star.probs[[s, a]] - pi.probs[[s, a]]) * q_star;
            }
            w -= lambda * (div_star[s] - q.divergence[s]);
            worst_w = worst_w.min(w);
            assert!(
                w >= -1e-10,
                "trial {trial} {kind} state {s}: bracket {w:.3e}"
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() <= 30, "took {elapsed:?}, budget 30s");
    pass(
        "identity-suite",
        format!("worst identity gap {worst_gap:.3e}, worst bracket {worst_w:.3e}, {elapsed:?}"),
    );
}

/// Inequality suite: score-function bounds on 1e4 samples, smoothness on
/// 1000 pairs per divergence, gradient domination on 1000 points per
/// divergence; zero violations.
#[test]
fn inequality_suite_has_zero_violations() {
    let start = Instant::now();
    let score = check_score_bounds(71, 10_000).unwrap();
    assert_eq!(
        score.violations, 0,
        "score bounds: {} violations, worst slack {:.3e}",
        score.violations, score.worst_slack
    );
    let mut details = format!("score slack {:.3e}", score.worst_slack);
    for kind in DivergenceKind::all_default() {
        let smooth = check_smoothness(72, 1000, kind).unwrap();
        assert_eq!(
            smooth.violations, 0,
            "smoothness[{kind}]: {} violations, worst slack {:.3e}",
            smooth.violations, smooth.worst_slack
        );
        let loja = check_lojasiewicz(73, 1000, kind).unwrap();
        assert_eq!(
            loja.violations, 0,
            "lojasiewicz[{kind}]: {} violations, worst slack {:.3e}",
            loja.violations, loja.worst_slack
        );
        details.push_str(&format!(
            ", {kind}: smooth {:.1e} loja {:.1e}",
            smooth.worst_slack, loja.worst_slack
        ));
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() <= 180, "took {elapsed:?}, budget 3min");
    pass("inequality-suite", format!("{details}, {elapsed:?}"));
}

fn fkl_setup() -> (Mdp, PolicyTable, InitialDistribution, InitialDistribution) {
    let mdp = random_mdp(7, 3, 3, 1.0, 0.9).unwrap();
    let pi_ref = uniform_ref(3, 3);
    let u = InitialDistribution::uniform(3, DistributionRole::GradientEval);
    let rho = InitialDistribution::uniform(3, DistributionRole::Reporting);
    (mdp, pi_ref, u, rho)
}

/// Forward-KL convergence on a seeded 3x3 instance over 500 budgeted outer
/// iterations: monotone value, per-iteration gap contraction with the
/// budget's coefficient, the stationary rate bound, and the policy floor.
#[test]
fn forward_kl_budgeted_run_satisfies_guarantees() {
    let start = Instant::now();
    let (mdp, pi_ref, u, rho) = fkl_setup();
    let lambda = 0.1;
    let kind = DivergenceKind::ForwardKl;
    let oracle = general_regularized_vi(&mdp, &pi_ref, kind, lambda, 1e-11).unwrap();
    let v_star_u = oracle.v_star.dot(&u.weights);
    let n_outer = 500usize;
    let config = ClipConfig {
        lambda,
        regularizer: Regularizer::ForwardKl,
        inner_steps: 10,
        outer_iters: n_outer,
        ..ClipConfig::default()
    };
    let out = run_from(
        &mdp,
        &pi_ref,
        &pi_ref.logits(),
        &u,
        &rho,
        &config,
        Some(v_star_u),
    )
    .unwrap();
    let q0 = evaluate_policy(&mdp, &pi_ref, &pi_ref, kind, lambda, &u).unwrap();
    let budget = step_budget_forward_kl(
        &mdp,
        &pi_ref,
        lambda,
        &u,
        config.eps_l,
        config.eps_h,
        q0.value_at(&u),
        Some(&oracle.pi_star),
    )
    .unwrap();
    let records = &out.log.records;
    assert_eq!(records.len(), n_outer);

    // (a) monotone value at u.
    for w in records.windows(2) {
        assert!(
            w[1].value_u >= w[0].value_u,
            "value decreased at n={}: {} -> {}",
            w[0].n,
            w[0].value_u,
            w[1].value_u
        );
    }
    // (b) per-iteration contraction of the optimality gap.
    let contraction = (-budget.lojasiewicz_c.unwrap()).exp();
    for w in records.windows(2) {
        let lhs = w[1].delta_n.unwrap();
        let rhs = contraction * w[0].delta_n.unwrap();
        assert!(
            lhs <= rhs + 1e-12,
            "gap contraction failed at n={}: {lhs} > {rhs}",
            w[0].n
        );
    }
    // (c) stationary rate.
    let min_grad_sq = records
        .iter()
        .map(|r| r.grad_norm * r.grad_norm)
        .fold(f64::INFINITY, f64::min);
    let delta1 = records[0].delta_n.unwrap();
    let s_max = records[0].s_max_n;
    let bound = 2.0 * delta1 / (n_outer as f64 * s_max);
    assert!(
        min_grad_sq <= bound,
        "stationary rate: min grad^2 {min_grad_sq:.3e} > bound {bound:.3e}"
    );
    // (d) policy floor across every inner iterate.
    let floor = 0.5 * budget.c_pi_floor.unwrap();
    for r in records {
        assert!(
            r.min_policy_inner >= floor,
            "floor broken at n={}: {} < {floor}",
            r.n,
            r.min_policy_inner
        );
        assert!(
            r.a_tilde_max_abs <= budget.a_max,
            "advantage bound broken at n={}",
            r.n
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() <= 60, "took {elapsed:?}, budget 60s");
    pass(
        "forward-kl-convergence",
        format!(
            "500 iterations, final gap {:.3e}, min grad^2 {min_grad_sq:.3e} <= {bound:.3e}, {elapsed:?}",
            records.last().unwrap().delta_n.unwrap()
        ),
    );
}

fn rkl_setup() -> (Mdp, PolicyTable, InitialDistribution, InitialDistribution) {
    let mdp = random_mdp(7, 3, 3, 1.0, 0.8).unwrap();
    let pi_ref = uniform_ref(3, 3);
    let u = InitialDistribution::uniform(3, DistributionRole::GradientEval);
    let rho = InitialDistribution::uniform(3, DistributionRole::Reporting);
    (mdp, pi_ref, u, rho)
}

/// Reverse-KL convergence: the surrogate error stays within a quarter of
/// the exact gradient at every inner step under the budget, the gradient
/// norm reaches 1e-6, and from a near-optimal start the gap decays
/// log-linearly down to the oracle value.
#[test]
fn reverse_kl_budgeted_run_satisfies_guarantees() {
    let start = Instant::now();
    let (mdp, pi_ref, u, rho) = rkl_setup();
    let lambda = 1.0;
    let soft = soft_value_iteration(&mdp, &pi_ref, lambda, 1e-12).unwrap();
    let v_star_u = soft.v_star.dot(&u.weights);
    let v_star_rho = soft.v_star.dot(&rho.weights);
    let config = ClipConfig {
        lambda,
        regularizer: Regularizer::ReverseKl,
        inner_steps: 10,
        outer_iters: 200_000,
        ..ClipConfig::default()
    };
    let out = run_from(
        &mdp,
        &pi_ref,
        &pi_ref.logits(),
        &u,
        &rho,
        &config,
        Some(v_star_u),
    )
    .unwrap();
    // (a) bounded surrogate error at every inner step.
    let mut worst_inexact = 0.0f64;
    for r in &out.log.records {
        worst_inexact = worst_inexact.max(r.max_rel_inexactness);
        assert!(
            r.max_rel_inexactness <= 0.25,
            "surrogate error {} at n={}",
            r.max_rel_inexactness,
            r.n
        );
    }
    // (b) gradient norm reaches 1e-6.
    let best_grad = out
        .log
        .records
        .iter()
        .map(|r| r.grad_norm)
        .fold(f64::INFINITY, f64::min);
    assert!(best_grad <= 1e-6, "gradient only reached {best_grad:.3e}");

    // (c) near-optimal start: log-linear decay and terminal agreement.
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let noise = Array2::from_shape_fn((3, 3), |_| rng.gen_range(-1e-2..1e-2));
    let theta0 = PolicyParams::new(&soft.pi_star.logits().theta + &noise).unwrap();
    let local = ClipConfig {
        outer_iters: 150_000,
        ..config
    };
    let local_out = run_from(&mdp, &pi_ref, &theta0, &u, &rho, &local, Some(v_star_u)).unwrap();
    for r in &local_out.log.records {
        assert!(
            r.max_rel_inexactness <= 0.25,
            "surrogate error {} at n={} (local run)",
            r.max_rel_inexactness,
            r.n
        );
    }
    let (slope, r2) = log_linear_fit(local_out.log.records.iter().filter_map(|r| {
        let d = r.delta_n.unwrap();
        (d > 1e-10).then_some((r.n as f64, d.ln()))
    }));
    assert!(r2 >= 0.99, "log-linear fit r^2 = {r2}");
    assert!(slope < 0.0, "slope {slope} not negative");
    let final_rho = local_out.log.records.last().unwrap().value_rho;
    let rho_gap = (final_rho - v_star_rho).abs();
    assert!(
        rho_gap <= 1e-6,
        "final value at rho misses the oracle by {rho_gap:.3e}"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() <= 120, "took {elapsed:?}, budget 2min");
    pass(
        "reverse-kl-convergence",
        format!(
            "worst surrogate error {worst_inexact:.4}, best grad {best_grad:.3e}, fit r^2 {r2:.6}, slope {slope:.3e}, rho gap {rho_gap:.3e}, {elapsed:?}"
        ),
    );
}

/// Oracle cross-validation: the closed-form and generic solvers agree on
/// reverse KL to 10x the tolerance, and the generic solver at vanishing
/// regularization matches plain optimal value iteration to 1e-3.
#[test]
fn oracle_cross_validation() {
    let start = Instant::now();
    let tol = 1e-10;
    let mut worst_rkl = 0.0f64;
    let mut worst_plain = 0.0f64;
    for seed in 0..5u64 {
        let mdp = random_mdp(seed, 4, 3, 1.0, 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pi_ref = policy_from_params(&random_theta(&mut rng, 4, 3)).unwrap();
        let soft = soft_value_iteration(&mdp, &pi_ref, 0.1, tol).unwrap();
        let gen =
            general_regularized_vi(&mdp, &pi_ref, DivergenceKind::ReverseKl, 0.1, tol).unwrap();
        for s in 0..4 {
            let gap = (soft.v_star[s] - gen.v_star[s]).abs();
            worst_rkl = worst_rkl.max(gap);
            assert!(gap <= 10.0 * tol, "seed {seed} state {s}: {gap:.3e}");
        }

        let (v_plain, _, _) = unregularized_value_iteration(&mdp, tol).unwrap();
        for kind in DivergenceKind::all_default() {
            let out = general_regularized_vi(&mdp, &pi_ref, kind, 1e-6, tol).unwrap();
            for s in 0..4 {
                let gap = (out.v_star[s] - v_plain[s]).abs();
                worst_plain = worst_plain.max(gap);
                assert!(gap <= 1e-3, "seed {seed} {kind} state {s}: {gap:.3e}");
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() <= 30, "took {elapsed:?}, budget 30s");
    pass(
        "oracle-cross-validation",
        format!("worst reverse-KL gap {worst_rkl:.3e}, worst small-lambda gap {worst_plain:.3e}, {elapsed:?}"),
    );
}

/// Anchor identity: the first inner surrogate gradient reproduces the exact
/// gradient to 1e-10 on every outer iteration, for both regularizers.
#[test]
fn anchor_gradient_identity_along_runs() {
    let start = Instant::now();
    let (mdp, pi_ref, u, rho) = fkl_setup();
    let mut worst = 0.0f64;
    for (regularizer, lambda, outer) in [
        (Regularizer::ForwardKl, 0.1, 500),
        (Regularizer::ReverseKl, 0.1, 1000),
    ] {
        let config = ClipConfig {
            lambda,
            regularizer,
            inner_steps: 10,
            outer_iters: outer,
            step_split: StepSplit::Uniform,
            ..ClipConfig::default()
        };
        let out = run_from(&mdp, &pi_ref, &pi_ref.logits(), &u, &rho, &config, None).unwrap();
        for r in &out.log.records {
            worst = worst.max(r.anchor_gap);
            assert!(
                r.anchor_gap <= 1e-10,
                "{regularizer} n={}: anchor gap {:.3e}",
                r.n,
                r.anchor_gap
            );
        }
    }
    let elapsed = start.elapsed();
    pass(
        "anchor-identity",
        format!("worst anchor gap {worst:.3e}, {elapsed:?}"),
    );
}
