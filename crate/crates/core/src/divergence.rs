//! The five f-divergence generators with first and second derivatives, the
//! curvature and derivative-bound constants attached to each generator, and
//! divergence evaluation between distributions.
//!
//! Generators (natural log throughout):
//!   alpha(a):    (x^(1-a) - (1-a)x - a) / (a(a-1)),  a in (0,1)
//!   reverse KL:  x ln x
//!   forward KL:  -ln x
//!   JS:          x ln x - (x+1) ln((x+1)/2)
//!   chi^2:       (x-1)^2

use ndarray::{Array1, Array2};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::policy::PolicyTable;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DivergenceKind {
    Alpha(f64),
    ReverseKl,
    ForwardKl,
    Js,
    Chi2,
}

impl DivergenceKind {
    /// Alpha-divergence restricted to exponents in (0,1).
    pub fn alpha(a: f64) -> Result<Self> {
        if !(0.0 < a && a < 1.0) {
            return Err(Error::InvalidInput(format!(
                "alpha-divergence exponent {a} must lie in (0,1)"
            )));
        }
        Ok(DivergenceKind::Alpha(a))
    }

    pub fn validate(&self) -> Result<()> {
        if let DivergenceKind::Alpha(a) = self {
            if !(0.0 < *a && *a < 1.0) {
                return Err(Error::InvalidInput(format!(
                    "alpha-divergence exponent {a} must lie in (0,1)"
                )));
            }
        }
        Ok(())
    }

    pub fn all_default() -> Vec<DivergenceKind> {
        vec![
            DivergenceKind::Alpha(0.5),
            DivergenceKind::ReverseKl,
            DivergenceKind::ForwardKl,
            DivergenceKind::Js,
            DivergenceKind::Chi2,
        ]
    }
}

impl fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DivergenceKind::Alpha(a) => write!(f, "alpha:{a}"),
            DivergenceKind::ReverseKl => write!(f, "reverse-kl"),
            DivergenceKind::ForwardKl => write!(f, "forward-kl"),
            DivergenceKind::Js => write!(f, "js"),
            DivergenceKind::Chi2 => write!(f, "chi2"),
        }
    }
}

impl FromStr for DivergenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reverse-kl" => Ok(DivergenceKind::ReverseKl),
            "forward-kl" => Ok(DivergenceKind::ForwardKl),
            "js" => Ok(DivergenceKind::Js),
            "chi2" => Ok(DivergenceKind::Chi2),
            other => {
                if let Some(rest) = other.strip_prefix("alpha:") {
                    let a: f64 = rest.parse().map_err(|_| {
                        Error::InvalidInput(format!("cannot parse alpha exponent from '{rest}'"))
                    })?;
                    DivergenceKind::alpha(a)
                } else {
                    Err(Error::InvalidInput(format!(
                        "unknown divergence '{other}' (expected alpha:<a>, reverse-kl, forward-kl, js, chi2)"
                    )))
                }
            }
        }
    }
}

/// Generator value with its first two derivatives at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FDerivatives {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

/// Evaluates `(f(x), f'(x), f''(x))` for the chosen generator. Requires
/// `x > 0`.
pub fn f_eval(kind: DivergenceKind, x: f64) -> Result<FDerivatives> {
    kind.validate()?;
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::InvalidInput(format!(
            "generator argument {x} must be finite and > 0"
        )));
    }
    Ok(match kind {
        DivergenceKind::Alpha(a) => FDerivatives {
            value: (x.powf(1.0 - a) - (1.0 - a) * x - a) / (a * (a - 1.0)),
            first: (1.0 - x.powf(-a)) / a,
            second: x.powf(-a - 1.0),
        },
        DivergenceKind::ReverseKl => FDerivatives {
            value: x * x.ln(),
            first: x.ln() + 1.0,
            second: 1.0 / x,
        },
        DivergenceKind::ForwardKl => FDerivatives {
            value: -x.ln(),
            first: -1.0 / x,
            second: 1.0 / (x * x),
        },
        DivergenceKind::Js => FDerivatives {
            value: x * x.ln() - (x + 1.0) * ((x + 1.0) / 2.0).ln(),
            first: (2.0 * x / (x + 1.0)).ln(),
            second: 1.0 / (x * (x + 1.0)),
        },
        DivergenceKind::Chi2 => FDerivatives {
            value: (x - 1.0) * (x - 1.0),
            first: 2.0 * (x - 1.0),
            second: 2.0,
        },
    })
}

/// `D_f(p, q) = sum_a q(a) f(p(a)/q(a))`. `q` must be strictly positive;
/// `p` may touch zero only where the generator is finite at 0 (chi^2, JS,
/// alpha); the log-based generators require `p > 0`.
pub fn divergence_value(kind: DivergenceKind, p: &Array1<f64>, q: &Array1<f64>) -> Result<f64> {
    kind.validate()?;
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch(format!(
            "p has {} entries, q has {}",
            p.len(),
            q.len()
        )));
    }
    let mut total = 0.0;
    for (&pa, &qa) in p.iter().zip(q.iter()) {
        if !(qa > 0.0) {
            return Err(Error::InvalidInput(format!(
                "reference distribution entry {qa} must be > 0"
            )));
        }
        let x = pa / qa;
        let f = if x == 0.0 {
            generator_at_zero(kind)?
        } else {
            f_eval(kind, x)?.value
        };
        total += qa * f;
    }
    Ok(total)
}

fn generator_at_zero(kind: DivergenceKind) -> Result<f64> {
    match kind {
        // Limits of the generator as x -> 0+ where they are finite.
        DivergenceKind::Alpha(a) => Ok(1.0 / (1.0 - a)),
        DivergenceKind::ReverseKl => Ok(0.0),
        DivergenceKind::Js => Ok(std::f64::consts::LN_2),
        DivergenceKind::Chi2 => Ok(1.0),
        DivergenceKind::ForwardKl => Err(Error::InvalidInput(
            "forward KL generator diverges at 0".into(),
        )),
    }
}

/// Ratio table `w(s,a) = pi(a|s) / pi_ref(a|s)` assembled in log space.
pub fn ratio_table(pi: &PolicyTable, pi_ref: &PolicyTable) -> Result<Array2<f64>> {
    if pi.probs.dim() != pi_ref.probs.dim() {
        return Err(Error::DimensionMismatch(format!(
            "policy {:?} vs reference {:?}",
            pi.probs.dim(),
            pi_ref.probs.dim()
        )));
    }
    Ok(Array2::from_shape_fn(pi.probs.dim(), |(s, a)| {
        (pi.log_probs[[s, a]] - pi_ref.log_probs[[s, a]]).exp()
    }))
}

/// Per-state divergence vector `s -> D_f(pi(.|s), pi_ref(.|s))`.
pub fn policy_divergence_vector(
    kind: DivergenceKind,
    pi: &PolicyTable,
    pi_ref: &PolicyTable,
) -> Result<Array1<f64>> {
    let w = ratio_table(pi, pi_ref)?;
    let (ns, na) = w.dim();
    let mut out = Array1::zeros(ns);
    for s in 0..ns {
        let mut acc = 0.0;
        for a in 0..na {
            let x = w[[s, a]];
            if !(x > 0.0) || !x.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "policy ratio {x} at (s={s}, a={a}) left the representable range; \
                     the policy has collapsed out of the simplex interior"
                )));
            }
            acc += pi_ref.probs[[s, a]] * f_eval(kind, x)?.value;
        }
        out[s] = acc;
    }
    Ok(out)
}

/// Constants attached to a generator for a fixed reference policy:
/// `c_f1` bounds `x|f'(x)|` and `c_f2` bounds `x^2|f''(x)|` on
/// `(0, 1/c_ref)`; `m_s` is the per-state strong-concavity modulus of the
/// regularized single-state objective over the simplex,
/// `inf_{p,a} f''(p_a / pi_ref(a|s)) / pi_ref(a|s)`.
#[derive(Debug, Clone)]
pub struct DivergenceConstants {
    pub c_f1: f64,
    pub c_f2: f64,
    pub m_s: Array1<f64>,
    pub c_ref: f64,
}

impl DivergenceConstants {
    /// Smallest per-state modulus, `c_m = min_s m_s`.
    pub fn c_m(&self) -> f64 {
        self.m_s.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Derives the generator constants for a reference policy with minimum entry
/// `c_ref`. For chi^2 the derivative bound is the exact supremum
/// `max{1/2, 2(1/c)(1/c - 1)}`; for JS the modulus is the exact infimum
/// `c_s/(1+c_s)` per state. The remaining entries are the nominal closed
/// forms.
pub fn table_constants(
    kind: DivergenceKind,
    c_ref: f64,
    pi_ref: &PolicyTable,
) -> Result<DivergenceConstants> {
    kind.validate()?;
    if !(c_ref > 0.0 && c_ref <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "c_ref {c_ref} must lie in (0, 1]"
        )));
    }
    let cinv = 1.0 / c_ref;
    let ns = pi_ref.num_states();
    let row_min = |s: usize| -> f64 {
        pi_ref
            .probs
            .row(s)
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    };
    let (c_f1, c_f2, m_s) = match kind {
        DivergenceKind::Alpha(a) => (
            1.0 / (a * c_ref),
            c_ref.powf(a - 1.0),
            Array1::from_shape_fn(ns, |s| row_min(s).powf(a)),
        ),
        DivergenceKind::ReverseKl => (
            (1.0 / std::f64::consts::E).max(cinv * cinv.ln()) + cinv,
            cinv,
            Array1::ones(ns),
        ),
        DivergenceKind::ForwardKl => (1.0, 1.0, Array1::from_shape_fn(ns, row_min)),
        DivergenceKind::Js => (
            (1.0 / std::f64::consts::E).max(cinv * std::f64::consts::LN_2),
            1.0,
            Array1::from_shape_fn(ns, |s| {
                let c_s = row_min(s);
                c_s / (1.0 + c_s)
            }),
        ),
        DivergenceKind::Chi2 => (
            (0.5f64).max(2.0 * cinv * (cinv - 1.0)),
            2.0 * cinv * cinv,
            Array1::from_elem(ns, 2.0),
        ),
    };
    Ok(DivergenceConstants {
        c_f1,
        c_f2,
        m_s,
        c_ref,
    })
}
