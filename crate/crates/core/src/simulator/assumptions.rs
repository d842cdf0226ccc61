//! Sampling-based falsification of the Lyapunov-like assumptions:
//! sandwich bounds on `V_p`, the dissipation inequality along `f_p`, and the
//! jump bound `V_q <= μ_pq V_p` across each admissible switch.
//!
//! A clean run is evidence, not proof.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::expr::{parse_expr, ExprAst, ExprError};
use crate::system::{SubsystemSpec, SystemSpec};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("invalid probe configuration: {0}")]
    Config(String),
    #[error("comparison function `{text}`: {source}")]
    Comparison { text: String, source: ExprError },
    #[error("evaluation failed at state {state:?}, input {input:?}: {source}")]
    Eval {
        state: Vec<f64>,
        input: Vec<f64>,
        source: ExprError,
    },
}

/// A scalar function of `s`, and whether it was fitted from samples rather
/// than supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonFunction {
    pub expr: ExprAst,
    pub fitted: bool,
}

impl fmt::Display for ComparisonFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.expr)?;
        if self.fitted {
            f.write_str(" (fitted)")?;
        }
        Ok(())
    }
}

pub fn parse_comparison(text: &str) -> Result<ComparisonFunction, ProbeError> {
    parse_expr(text, &["s"])
        .map(|expr| ComparisonFunction {
            expr,
            fitted: false,
        })
        .map_err(|source| ProbeError::Comparison {
            text: text.to_string(),
            source,
        })
}

fn quadratic(c: f64) -> ComparisonFunction {
    let expr = parse_expr(&format!("{c:?}*s^2"), &["s"]).expect("generated expression");
    ComparisonFunction { expr, fitted: true }
}

#[derive(Debug, Clone)]
pub struct AssumptionProbeConfig {
    pub samples: usize,
    /// Per-component `(lo, hi)` for states.
    pub state_box: Vec<(f64, f64)>,
    /// Per-component `(lo, hi)` for inputs.
    pub input_box: Vec<(f64, f64)>,
    pub alpha_lower: Option<ComparisonFunction>,
    pub alpha_upper: Option<ComparisonFunction>,
    pub gamma1: Option<ComparisonFunction>,
    pub gamma2: Option<ComparisonFunction>,
    /// Central-difference step relative to `1 + |ξ_i|`.
    pub fd_step: f64,
    pub seed: u64,
    /// Relative slack before a sampled margin counts as a violation.
    pub tolerance: f64,
    /// Largest coefficient accepted when fitting default gains.
    pub gamma_cap: f64,
}

impl AssumptionProbeConfig {
    pub fn symmetric(spec: &SystemSpec, state_radius: f64, input_radius: f64) -> Self {
        AssumptionProbeConfig {
            samples: 10_000,
            state_box: vec![(-state_radius, state_radius); spec.dims.d],
            input_box: vec![(-input_radius, input_radius); spec.dims.m],
            alpha_lower: None,
            alpha_upper: None,
            gamma1: None,
            gamma2: None,
            fd_step: 1e-6,
            seed: spec.defaults.seed,
            tolerance: 1e-7,
            gamma_cap: 10.0,
        }
    }

    fn validate(&self, spec: &SystemSpec) -> Result<(), ProbeError> {
        let bad = |m: String| Err(ProbeError::Config(m));
        if self.samples == 0 {
            return bad("sample count must be at least 1".into());
        }
        if self.state_box.len() != spec.dims.d {
            return bad(format!(
                "state box has {} components, system has {}",
                self.state_box.len(),
                spec.dims.d
            ));
        }
        if self.input_box.len() != spec.dims.m {
            return bad(format!(
                "input box has {} components, system has {}",
                self.input_box.len(),
                spec.dims.m
            ));
        }
        for &(lo, hi) in self.state_box.iter().chain(&self.input_box) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(format!("empty or non-finite box [{lo}, {hi}]"));
            }
        }
        if !(self.fd_step > 0.0 && self.tolerance >= 0.0 && self.gamma_cap > 0.0) {
            return bad("fd_step and gamma_cap must be positive, tolerance nonnegative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssumptionKind {
    /// `α̲(|ξ|) <= V_p(ξ)`
    LowerBound,
    /// `V_p(ξ) <= ᾱ(|ξ|)`
    UpperBound,
    /// `∇V_p·f_p <= -λ_p V_p + γ1(|η|) + γ2(|h_p|)`
    Dissipation,
    /// `V_q <= μ_pq V_p`
    Jump,
}

impl fmt::Display for AssumptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AssumptionKind::LowerBound => "lower-bound",
            AssumptionKind::UpperBound => "upper-bound",
            AssumptionKind::Dissipation => "dissipation",
            AssumptionKind::Jump => "jump",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionViolation {
    pub kind: AssumptionKind,
    /// Subsystem id, or `p->q` for jumps.
    pub location: String,
    pub state: Vec<f64>,
    pub input: Vec<f64>,
    /// `rhs - lhs`; negative here.
    pub margin: f64,
}

#[derive(Debug, Clone)]
pub struct AssumptionReport {
    pub violations: Vec<AssumptionViolation>,
    /// Smallest margin per subsystem: `(lower, upper, dissipation)`.
    pub worst_subsystem: Vec<(String, [f64; 3])>,
    /// Smallest jump margin per edge.
    pub worst_edge: Vec<(String, f64)>,
    pub alpha_lower: ComparisonFunction,
    pub alpha_upper: ComparisonFunction,
    pub gamma1: ComparisonFunction,
    pub gamma2: ComparisonFunction,
    /// The fitted gain hit `gamma_cap`.
    pub gamma_capped: bool,
    pub samples: usize,
}

impl AssumptionReport {
    pub fn clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Central-difference gradient, step `rel·(1 + |ξ_i|)` per component.
pub fn gradient_fd(v: &ExprAst, x: &[f64], rel: f64) -> Result<Vec<f64>, ExprError> {
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let h = rel * (1.0 + x[i].abs());
        probe[i] = x[i] + h;
        let up = v.eval_slice(&probe)?;
        probe[i] = x[i] - h;
        let down = v.eval_slice(&probe)?;
        probe[i] = x[i];
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct Point {
    v: f64,
    /// `∇V·f`
    flow: f64,
    out_norm: f64,
}

fn evaluate(sub: &SubsystemSpec, x: &[f64], u: &[f64], fd_step: f64) -> Result<Point, ProbeError> {
    let wrap = |source| ProbeError::Eval {
        state: x.to_vec(),
        input: u.to_vec(),
        source,
    };
    let v = sub.eval_lyapunov(x).map_err(wrap)?;
    let grad = gradient_fd(&sub.lyapunov, x, fd_step).map_err(wrap)?;
    let mut f = vec![0.0; x.len()];
    sub.eval_dynamics(x, u, &mut f).map_err(wrap)?;
    let flow = grad.iter().zip(&f).map(|(g, f)| g * f).sum();
    let out_norm = norm(&sub.eval_output(x).map_err(wrap)?);
    Ok(Point { v, flow, out_norm })
}

fn draw(rng: &mut ChaCha8Rng, bounds: &[(f64, f64)]) -> Vec<f64> {
    bounds
        .iter()
        .map(|&(lo, hi)| {
            if lo < hi {
                rng.random_range(lo..=hi)
            } else {
                lo
            }
        })
        .collect()
}

struct Fit {
    alpha_lower: f64,
    alpha_upper: f64,
    gamma: f64,
    capped: bool,
}

/// Quadratic defaults fitted on a calibration sample drawn from a separate
/// stream: `a·s²` below `V`, `b·s²` above, and `c·s²` for both gains.
/// Safety factor 2 on each coefficient.
fn fit_defaults(spec: &SystemSpec, cfg: &AssumptionProbeConfig) -> Result<Fit, ProbeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let (mut lo, mut hi, mut gain) = (f64::INFINITY, 0.0f64, 0.0f64);
    for _ in 0..cfg.samples {
        let x = draw(&mut rng, &cfg.state_box);
        let u = draw(&mut rng, &cfg.input_box);
        let nx2 = x.iter().map(|c| c * c).sum::<f64>();
        let nu2 = u.iter().map(|c| c * c).sum::<f64>();
        for sub in &spec.subsystems {
            let p = evaluate(sub, &x, &u, cfg.fd_step)?;
            if nx2 > 1e-12 {
                lo = lo.min(p.v / nx2);
                hi = hi.max(p.v / nx2);
            }
            let denom = nu2 + p.out_norm * p.out_norm;
            let excess = p.flow + sub.lambda() * p.v;
            if denom > 1e-12 && excess > 0.0 {
                gain = gain.max(excess / denom);
            }
        }
    }
    let raw = (2.0 * gain).max(1e-6);
    Ok(Fit {
        alpha_lower: if lo.is_finite() { 0.5 * lo } else { 0.0 },
        alpha_upper: 2.0 * hi,
        gamma: raw.min(cfg.gamma_cap),
        capped: raw > cfg.gamma_cap,
    })
}

pub fn check_assumptions(
    spec: &SystemSpec,
    cfg: &AssumptionProbeConfig,
) -> Result<AssumptionReport, ProbeError> {
    cfg.validate(spec)?;
    let needs_fit = cfg.alpha_lower.is_none()
        || cfg.alpha_upper.is_none()
        || cfg.gamma1.is_none()
        || cfg.gamma2.is_none();
    let fit = if needs_fit {
        Some(fit_defaults(spec, cfg)?)
    } else {
        None
    };
    let pick = |given: &Option<ComparisonFunction>, coef: fn(&Fit) -> f64| {
        given
            .clone()
            .unwrap_or_else(|| quadratic(coef(fit.as_ref().unwrap())))
    };
    let alpha_lower = pick(&cfg.alpha_lower, |f| f.alpha_lower);
    let alpha_upper = pick(&cfg.alpha_upper, |f| f.alpha_upper);
    let gamma1 = pick(&cfg.gamma1, |f| f.gamma);
    let gamma2 = pick(&cfg.gamma2, |f| f.gamma);
    let gamma_capped =
        fit.as_ref().is_some_and(|f| f.capped) && (cfg.gamma1.is_none() || cfg.gamma2.is_none());

    let comparison = |c: &ComparisonFunction, s: f64, x: &[f64], u: &[f64]| {
        c.expr.eval_slice(&[s]).map_err(|source| ProbeError::Eval {
            state: x.to_vec(),
            input: u.to_vec(),
            source,
        })
    };

    let mut violations = Vec::new();
    let mut worst_subsystem: Vec<(String, [f64; 3])> = spec
        .subsystems
        .iter()
        .map(|s| (s.id.clone(), [f64::INFINITY; 3]))
        .collect();
    let mut worst_edge: Vec<(String, f64)> = spec
        .edges
        .iter()
        .map(|e| {
            (
                format!(
                    "{}->{}",
                    spec.subsystems[e.from].id, spec.subsystems[e.to].id
                ),
                f64::INFINITY,
            )
        })
        .collect();
    let tol = cfg.tolerance;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut values = vec![0.0; spec.subsystems.len()];
    for _ in 0..cfg.samples {
        let x = draw(&mut rng, &cfg.state_box);
        let u = draw(&mut rng, &cfg.input_box);
        let nx = norm(&x);
        let nu = norm(&u);
        let mut flag = |kind, location: &str, margin: f64, scale: f64| {
            if margin < -tol * (1.0 + scale) {
                violations.push(AssumptionViolation {
                    kind,
                    location: location.to_string(),
                    state: x.clone(),
                    input: u.clone(),
                    margin,
                });
            }
        };
        for (p, sub) in spec.subsystems.iter().enumerate() {
            let pt = evaluate(sub, &x, &u, cfg.fd_step)?;
            values[p] = pt.v;
            let lower = pt.v - comparison(&alpha_lower, nx, &x, &u)?;
            let upper = comparison(&alpha_upper, nx, &x, &u)? - pt.v;
            let rhs = -sub.lambda() * pt.v
                + comparison(&gamma1, nu, &x, &u)?
                + comparison(&gamma2, pt.out_norm, &x, &u)?;
            let dissipation = rhs - pt.flow;
            let w = &mut worst_subsystem[p].1;
            w[0] = w[0].min(lower);
            w[1] = w[1].min(upper);
            w[2] = w[2].min(dissipation);
            flag(AssumptionKind::LowerBound, &sub.id, lower, pt.v.abs());
            flag(AssumptionKind::UpperBound, &sub.id, upper, pt.v.abs());
            flag(
                AssumptionKind::Dissipation,
                &sub.id,
                dissipation,
                pt.flow.abs() + rhs.abs(),
            );
        }
        for (k, e) in spec.edges.iter().enumerate() {
            let margin = e.mu * values[e.from] - values[e.to];
            worst_edge[k].1 = worst_edge[k].1.min(margin);
            let label = worst_edge[k].0.clone();
            flag(AssumptionKind::Jump, &label, margin, values[e.to].abs());
        }
    }
    Ok(AssumptionReport {
        violations,
        worst_subsystem,
        worst_edge,
        alpha_lower,
        alpha_upper,
        gamma1,
        gamma2,
        gamma_capped,
        samples: cfg.samples,
    })
}
