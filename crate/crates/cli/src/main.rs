//! Command-line front end for the tabular PPO-Clip engine.
//!
//! Subcommands: `train` (budgeted double-loop runs with CSV logging),
//! `check` (certification suites), `oracle` (regularized optimal policy and
//! value), `constants` (step-budget report), `random-mdp` (instance
//! generation). All randomness flows from explicit seeds; identical
//! invocations produce byte-identical outputs. Exit codes: 0 success,
//! 1 check violations, 2 usage or configuration errors.

use clap::{Args, Parser, Subcommand};
use ndarray::{Array1, Array2};
use serde::Deserialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ppoclip::checks::{run_suite, Suite};
use ppoclip::divergence::DivergenceKind;
use ppoclip::eval::{evaluate_policy, step_budget_forward_kl, step_budget_reverse_kl, Regularizer};
use ppoclip::mdp::{load_mdp, random_mdp, save_mdp, DistributionRole, InitialDistribution, Mdp};
use ppoclip::oracle::{general_regularized_vi, soft_value_iteration, OracleResult};
use ppoclip::policy::{policy_from_params, PolicyParams, PolicyTable};
use ppoclip::ppo::{run_from, ClipConfig, StepSplit};

const DEFAULT_GAMMA: f64 = 0.9;
const DEFAULT_LAMBDA: f64 = 0.1;
const DEFAULT_EPS: f64 = 0.2;
const DEFAULT_INNER: usize = 10;
const DEFAULT_TOL: f64 = 1e-10;

#[derive(Parser)]
#[command(
    name = "ppoclip",
    version,
    about = "Deterministic tabular PPO-Clip with f-divergence regularization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the double-loop clipped-surrogate optimizer and log one CSV row
    /// per outer iteration.
    Train(TrainArgs),
    /// Run certification suites and emit JSON reports.
    Check(CheckArgs),
    /// Compute the regularized optimal policy and value.
    Oracle(OracleArgs),
    /// Emit the step-budget constants as JSON.
    Constants(ConstantsArgs),
    /// Generate a random MDP file.
    RandomMdp(RandomMdpArgs),
}

#[derive(Args)]
struct MdpSelect {
    /// MDP source: a JSON file path or `random:<seed>,<states>,<actions>`.
    #[arg(long)]
    mdp: Option<String>,
    /// Discount factor for generated MDPs.
    #[arg(long)]
    gamma: Option<f64>,
    /// Reward ceiling for generated MDPs.
    #[arg(long)]
    r_max: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    mdp: MdpSelect,
    /// Regularizer: forward-kl or reverse-kl.
    #[arg(long)]
    divergence: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    eps_l: Option<f64>,
    #[arg(long)]
    eps_h: Option<f64>,
    /// Outer iterations.
    #[arg(long)]
    outer: Option<usize>,
    /// Inner ascent steps per outer iteration.
    #[arg(long)]
    inner: Option<usize>,
    /// Multiplier on the budgeted step sum.
    #[arg(long)]
    step_scale: Option<f64>,
    /// Theory-off mode: fixed step sum replacing the budget.
    #[arg(long)]
    step_override: Option<f64>,
    /// CSV output path (stdout when omitted).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Skip the oracle solve; the delta_n column is left empty.
    #[arg(long)]
    no_oracle: bool,
    /// Reference-policy logits as a JSON [s][a] array file (uniform when
    /// omitted).
    #[arg(long)]
    pi_ref: Option<PathBuf>,
    /// Initial logits as a JSON [s][a] array file (the reference policy when
    /// omitted).
    #[arg(long)]
    init_theta: Option<PathBuf>,
    /// Write the final logits as a JSON [s][a] array checkpoint.
    #[arg(long)]
    save_theta: Option<PathBuf>,
    /// JSON file supplying any of the above plus custom `u` / `rho`
    /// weight vectors; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    /// Suite: all, score, pdl, smooth, loja, rates.
    #[arg(long, default_value = "all")]
    suite: String,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Instances per sampled check.
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// JSON report path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    mdp: MdpSelect,
    /// Divergence: alpha:<a>, reverse-kl, forward-kl, js, chi2.
    #[arg(long, default_value = "reverse-kl")]
    divergence: String,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// Reference-policy logits file (uniform when omitted).
    #[arg(long)]
    pi_ref: Option<PathBuf>,
    /// Use the generic solver even for reverse KL.
    #[arg(long)]
    general: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConstantsArgs {
    #[command(flatten)]
    mdp: MdpSelect,
    /// Regularizer: forward-kl or reverse-kl.
    #[arg(long, default_value = "forward-kl")]
    divergence: String,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps_l: f64,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps_h: f64,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long)]
    pi_ref: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RandomMdpArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    states: usize,
    #[arg(long, default_value_t = 3)]
    actions: usize,
    #[arg(long, default_value_t = 1.0)]
    r_max: f64,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    gamma: f64,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// File-based overrides for `train`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFileConfig {
    mdp: Option<String>,
    gamma: Option<f64>,
    r_max: Option<f64>,
    divergence: Option<String>,
    lambda: Option<f64>,
    eps_l: Option<f64>,
    eps_h: Option<f64>,
    outer: Option<usize>,
    inner: Option<usize>,
    step_scale: Option<f64>,
    step_override: Option<f64>,
    u: Option<Vec<f64>>,
    rho: Option<Vec<f64>>,
    pi_ref: Option<Vec<Vec<f64>>>,
    init_theta: Option<Vec<Vec<f64>>>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> ppoclip::Result<ExitCode> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Check(args) => cmd_check(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::Constants(args) => cmd_constants(args),
        Command::RandomMdp(args) => cmd_random_mdp(args),
    }
}

fn resolve_mdp(source: &str, gamma: f64, r_max: f64) -> ppoclip::Result<Mdp> {
    if let Some(spec) = source.strip_prefix("random:") {
        let parts: Vec<&str> = spec.split(',').collect();
        if parts.len() != 3 {
            return Err(ppoclip::Error::InvalidInput(format!(
                "random MDP spec '{spec}' must be <seed>,<states>,<actions>"
            )));
        }
        let seed: u64 = parts[0]
            .trim()
            .parse()
            .map_err(|_| ppoclip::Error::InvalidInput(format!("bad seed '{}'", parts[0])))?;
        let states: usize = parts[1]
            .trim()
            .parse()
            .map_err(|_| ppoclip::Error::InvalidInput(format!("bad state count '{}'", parts[1])))?;
        let actions: usize = parts[2].trim().parse().map_err(|_| {
            ppoclip::Error::InvalidInput(format!("bad action count '{}'", parts[2]))
        })?;
        random_mdp(seed, states, actions, r_max, gamma)
    } else {
        load_mdp(Path::new(source))
    }
}

fn uniform_table(ns: usize, na: usize) -> ppoclip::Result<PolicyTable> {
    policy_from_params(&PolicyParams::new(Array2::zeros((ns, na)))?)
}

fn load_logits(path: &Path) -> ppoclip::Result<PolicyParams> {
    PolicyParams::from_json(&std::fs::read_to_string(path)?)
}

fn weights_distribution(
    weights: Option<Vec<f64>>,
    ns: usize,
    role: DistributionRole,
) -> ppoclip::Result<InitialDistribution> {
    match weights {
        Some(w) => InitialDistribution::new(Array1::from_vec(w), role),
        None => Ok(InitialDistribution::uniform(ns, role)),
    }
}

fn write_or_print(out: &Option<PathBuf>, text: &str) -> ppoclip::Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn parse_regularizer(s: &str) -> ppoclip::Result<Regularizer> {
    match s {
        "forward-kl" => Ok(Regularizer::ForwardKl),
        "reverse-kl" => Ok(Regularizer::ReverseKl),
        other => Err(ppoclip::Error::InvalidInput(format!(
            "regularizer must be forward-kl or reverse-kl, got '{other}'"
        ))),
    }
}

fn cmd_train(args: TrainArgs) -> ppoclip::Result<ExitCode> {
    let file: TrainFileConfig = match &args.config {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => TrainFileConfig::default(),
    };
    let gamma = args.mdp.gamma.or(file.gamma).unwrap_or(DEFAULT_GAMMA);
    let r_max = args.mdp.r_max.or(file.r_max).unwrap_or(1.0);
    let source = args
        .mdp
        .mdp
        .clone()
        .or(file.mdp.clone())
        .unwrap_or_else(|| "random:1,4,3".to_string());
    let mdp = resolve_mdp(&source, gamma, r_max)?;

    let regularizer = parse_regularizer(
        args.divergence
            .as_deref()
            .or(file.divergence.as_deref())
            .unwrap_or("forward-kl"),
    )?;
    let config = ClipConfig {
        eps_l: args.eps_l.or(file.eps_l).unwrap_or(DEFAULT_EPS),
        eps_h: args.eps_h.or(file.eps_h).unwrap_or(DEFAULT_EPS),
        lambda: args.lambda.or(file.lambda).unwrap_or(DEFAULT_LAMBDA),
        regularizer,
        inner_steps: args.inner.or(file.inner).unwrap_or(DEFAULT_INNER),
        outer_iters: args.outer.or(file.outer).unwrap_or(100),
        step_split: StepSplit::Uniform,
        step_scale: args.step_scale.or(file.step_scale).unwrap_or(1.0),
        step_override: args.step_override.or(file.step_override),
    };

    let pi_ref = match (&args.pi_ref, &file.pi_ref) {
        (Some(path), _) => policy_from_params(&load_logits(path)?)?,
        (None, Some(rows)) => {
            let ns = rows.len();
            let na = rows.first().map_or(0, |r| r.len());
            policy_from_params(&PolicyParams::new(Array2::from_shape_fn(
                (ns, na),
                |(s, a)| rows[s][a],
            ))?)?
        }
        (None, None) => uniform_table(mdp.num_states, mdp.num_actions)?,
    };
    let theta0 = match (&args.init_theta, &file.init_theta) {
        (Some(path), _) => load_logits(path)?,
        (None, Some(rows)) => {
            let ns = rows.len();
            let na = rows.first().map_or(0, |r| r.len());
            PolicyParams::new(Array2::from_shape_fn((ns, na), |(s, a)| rows[s][a]))?
        }
        (None, None) => pi_ref.logits(),
    };
    // rho defaults to u when only u is customized.
    let rho_weights = file.rho.clone().or_else(|| file.u.clone());
    let u = weights_distribution(file.u, mdp.num_states, DistributionRole::GradientEval)?;
    let rho = weights_distribution(rho_weights, mdp.num_states, DistributionRole::Reporting)?;

    let v_star_u = if args.no_oracle {
        None
    } else {
        let v_star = match regularizer {
            Regularizer::ReverseKl => {
                soft_value_iteration(&mdp, &pi_ref, config.lambda, DEFAULT_TOL)?.v_star
            }
            Regularizer::ForwardKl => {
                general_regularized_vi(
                    &mdp,
                    &pi_ref,
                    DivergenceKind::ForwardKl,
                    config.lambda,
                    DEFAULT_TOL,
                )?
                .v_star
            }
        };
        Some(v_star.dot(&u.weights))
    };

    let outcome = run_from(&mdp, &pi_ref, &theta0, &u, &rho, &config, v_star_u)?;

    let mut csv =
        String::from("n,value_u,value_rho,grad_norm,delta_n,min_policy,s_max_n,clip_fraction\n");
    for r in &outcome.log.records {
        let delta = r.delta_n.map_or(String::new(), |d| format!("{d}"));
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.n,
            r.value_u,
            r.value_rho,
            r.grad_norm,
            delta,
            r.min_policy,
            r.s_max_n,
            r.clip_fraction
        ));
    }
    match &args.log {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    if let Some(path) = &args.save_theta {
        std::fs::write(path, outcome.theta.to_json()?)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(args: CheckArgs) -> ppoclip::Result<ExitCode> {
    let suite: Suite = args.suite.parse()?;
    let reports = run_suite(suite, args.seed, args.trials)?;
    let text = serde_json::to_string_pretty(&reports)?;
    write_or_print(&args.out, &text)?;
    let violations: usize = reports.iter().map(|r| r.violations).sum();
    for r in &reports {
        eprintln!(
            "{}: {} instances, {} violations, worst slack {:.3e}",
            r.check_name, r.instances_run, r.violations, r.worst_slack
        );
    }
    if violations == 0 {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}

fn oracle_json(result: &OracleResult) -> serde_json::Value {
    let ns = result.pi_star.num_states();
    let na = result.pi_star.num_actions();
    serde_json::json!({
        "v_star": result.v_star.to_vec(),
        "pi_star": (0..ns)
            .map(|s| (0..na).map(|a| result.pi_star.probs[[s, a]]).collect::<Vec<_>>())
            .collect::<Vec<_>>(),
        "residual": result.residual,
        "iterations": result.iterations,
    })
}

fn cmd_oracle(args: OracleArgs) -> ppoclip::Result<ExitCode> {
    let gamma = args.mdp.gamma.unwrap_or(DEFAULT_GAMMA);
    let r_max = args.mdp.r_max.unwrap_or(1.0);
    let source = args
        .mdp
        .mdp
        .clone()
        .unwrap_or_else(|| "random:1,4,3".to_string());
    let mdp = resolve_mdp(&source, gamma, r_max)?;
    let pi_ref = match &args.pi_ref {
        Some(path) => policy_from_params(&load_logits(path)?)?,
        None => uniform_table(mdp.num_states, mdp.num_actions)?,
    };
    let kind: DivergenceKind = args.divergence.parse()?;
    let result = if kind == DivergenceKind::ReverseKl && !args.general {
        soft_value_iteration(&mdp, &pi_ref, args.lambda, args.tol)?
    } else {
        general_regularized_vi(&mdp, &pi_ref, kind, args.lambda, args.tol)?
    };
    let text = serde_json::to_string_pretty(&oracle_json(&result))?;
    write_or_print(&args.out, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_constants(args: ConstantsArgs) -> ppoclip::Result<ExitCode> {
    let gamma = args.mdp.gamma.unwrap_or(DEFAULT_GAMMA);
    let r_max = args.mdp.r_max.unwrap_or(1.0);
    let source = args
        .mdp
        .mdp
        .clone()
        .unwrap_or_else(|| "random:1,4,3".to_string());
    let mdp = resolve_mdp(&source, gamma, r_max)?;
    let pi_ref = match &args.pi_ref {
        Some(path) => policy_from_params(&load_logits(path)?)?,
        None => uniform_table(mdp.num_states, mdp.num_actions)?,
    };
    let regularizer = parse_regularizer(&args.divergence)?;
    let u = InitialDistribution::uniform(mdp.num_states, DistributionRole::GradientEval);

    let (budget, oracle) = match regularizer {
        Regularizer::ForwardKl => {
            let oracle = general_regularized_vi(
                &mdp,
                &pi_ref,
                DivergenceKind::ForwardKl,
                args.lambda,
                args.tol,
            )?;
            let q0 = evaluate_policy(
                &mdp,
                &pi_ref,
                &pi_ref,
                DivergenceKind::ForwardKl,
                args.lambda,
                &u,
            )?;
            let budget = step_budget_forward_kl(
                &mdp,
                &pi_ref,
                args.lambda,
                &u,
                args.eps_l,
                args.eps_h,
                q0.value_at(&u),
                Some(&oracle.pi_star),
            )?;
            (budget, oracle)
        }
        Regularizer::ReverseKl => {
            let oracle = soft_value_iteration(&mdp, &pi_ref, args.lambda, args.tol)?;
            let budget = step_budget_reverse_kl(
                &mdp,
                &pi_ref,
                args.lambda,
                &pi_ref,
                args.eps_l,
                args.eps_h,
            )?;
            (budget, oracle)
        }
    };
    let text = serde_json::to_string_pretty(&serde_json::json!({
        "budget": budget,
        "oracle": {
            "v_star_u": oracle.v_star.dot(&u.weights),
            "residual": oracle.residual,
            "iterations": oracle.iterations,
        },
    }))?;
    write_or_print(&args.out, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_random_mdp(args: RandomMdpArgs) -> ppoclip::Result<ExitCode> {
    let mdp = random_mdp(args.seed, args.states, args.actions, args.r_max, args.gamma)?;
    match &args.out {
        Some(path) => save_mdp(&mdp, path)?,
        None => println!("{}", ppoclip::mdp::mdp_to_json(&mdp)?),
    }
    Ok(ExitCode::SUCCESS)
}
