//! System files: the family of subsystems, admissible switches and dwell
//! bounds, loaded from JSON and validated with field paths.
//!
//! ```json
//! {
//!   "dims": {"d": 2, "m": 1, "p_out": 1},
//!   "subsystems": [
//!     {"id": 1, "stable": true, "lambda": 3.5, "delta": 3.5, "Delta": 4,
//!      "f": ["-2*x1", "-2*x2 + 0.5*v1"], "h": ["x1 - x2"], "V": "0.5*(x1^2 + x2^2)"}
//!   ],
//!   "edges": [{"from": 1, "to": 2, "mu": 1}],
//!   "defaults": {"tolerance": 1e-9, "rk_step": 1e-3, "seed": 0}
//! }
//! ```
//!
//! `lambda` is the magnitude `|λ|`; the sign comes from `stable`.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{parse_expr, ExprAst, ExprError};
use crate::graph::{GraphError, StabilityClass, StabilityGraph, VertexSpec, DEFAULT_TOLERANCE};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed system file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid system file:\n{}", format_violations(.0))]
    Invalid(Vec<Violation>),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| format!("  {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl SpecError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            SpecError::Invalid(v) => v,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
enum RawLabel {
    Int(i64),
    Text(String),
}

impl RawLabel {
    fn into_string(self) -> String {
        match self {
            RawLabel::Int(i) => i.to_string(),
            RawLabel::Text(s) => s,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    dims: Dims,
    subsystems: Vec<RawSubsystem>,
    #[serde(default)]
    edges: Vec<RawEdge>,
    #[serde(default)]
    defaults: Defaults,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSubsystem {
    id: RawLabel,
    stable: bool,
    lambda: f64,
    delta: f64,
    #[serde(rename = "Delta")]
    big_delta: f64,
    f: Vec<String>,
    #[serde(default)]
    h: Vec<String>,
    #[serde(rename = "V")]
    lyapunov: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdge {
    from: RawLabel,
    to: RawLabel,
    mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    /// State dimension.
    pub d: usize,
    /// Input dimension.
    pub m: usize,
    /// Output dimension.
    #[serde(default)]
    pub p_out: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Defaults {
    pub tolerance: f64,
    pub rk_step: f64,
    pub seed: u64,
}

impl Default for Defaults {
    fn default() -> Self {
        Defaults {
            tolerance: DEFAULT_TOLERANCE,
            rk_step: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SubsystemSpec {
    pub id: String,
    pub class: StabilityClass,
    pub lambda_abs: f64,
    pub delta: f64,
    pub big_delta: f64,
    /// One expression per state component, over `x1..xd, v1..vm`.
    pub dynamics: Vec<ExprAst>,
    /// One expression per output component, over `x1..xd`.
    pub output: Vec<ExprAst>,
    /// Lyapunov-like function over `x1..xd`.
    pub lyapunov: ExprAst,
}

impl SubsystemSpec {
    /// Signed rate: `+|λ|` when IOSS, `-|λ|` otherwise.
    pub fn lambda(&self) -> f64 {
        match self.class {
            StabilityClass::Ioss => self.lambda_abs,
            StabilityClass::NonIoss => -self.lambda_abs,
        }
    }

    /// Writes `f_p(x, v)` into `out`.
    pub fn eval_dynamics(&self, x: &[f64], v: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        let mut args = Vec::with_capacity(x.len() + v.len());
        args.extend_from_slice(x);
        args.extend_from_slice(v);
        for (o, f) in out.iter_mut().zip(&self.dynamics) {
            *o = f.eval_slice(&args)?;
        }
        Ok(())
    }

    pub fn eval_output(&self, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        self.output.iter().map(|h| h.eval_slice(x)).collect()
    }

    pub fn eval_lyapunov(&self, x: &[f64]) -> Result<f64, ExprError> {
        self.lyapunov.eval_slice(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeSpec {
    pub from: usize,
    pub to: usize,
    pub mu: f64,
}

#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub dims: Dims,
    pub subsystems: Vec<SubsystemSpec>,
    pub edges: Vec<EdgeSpec>,
    pub defaults: Defaults,
}

pub fn state_vars(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("x{i}")).collect()
}

pub fn input_vars(m: usize) -> Vec<String> {
    (1..=m).map(|i| format!("v{i}")).collect()
}

pub fn load_spec(path: impl AsRef<Path>) -> Result<SystemSpec, SpecError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SpecError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    SystemSpec::from_json_str(&text)
}

impl SystemSpec {
    pub fn from_json_str(text: &str) -> Result<Self, SpecError> {
        let raw: RawSpec = serde_json::from_str(text)?;
        Self::from_raw(raw)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self, SpecError> {
        let raw: RawSpec = serde_json::from_value(value)?;
        Self::from_raw(raw)
    }

    pub fn subsystem_index(&self, id: &str) -> Option<usize> {
        self.subsystems.iter().position(|s| s.id == id)
    }

    fn from_raw(raw: RawSpec) -> Result<Self, SpecError> {
        let mut errs = Vec::new();
        let mut push = |path: String, message: String| errs.push(Violation { path, message });

        let dims = raw.dims;
        if dims.d == 0 {
            push("dims.d".into(), "state dimension must be at least 1".into());
        }
        if raw.subsystems.is_empty() {
            push(
                "subsystems".into(),
                "at least one subsystem is required".into(),
            );
        }
        let d = raw.defaults;
        if !(d.tolerance.is_finite() && d.tolerance >= 0.0) {
            push(
                "defaults.tolerance".into(),
                "must be finite and >= 0".into(),
            );
        }
        if !(d.rk_step.is_finite() && d.rk_step > 0.0) {
            push("defaults.rk_step".into(), "must be finite and > 0".into());
        }

        let xs = state_vars(dims.d);
        let vs = input_vars(dims.m);
        let x_only: Vec<&str> = xs.iter().map(String::as_str).collect();
        let x_and_v: Vec<&str> = xs.iter().chain(&vs).map(String::as_str).collect();

        let mut subsystems = Vec::new();
        let mut labels: Vec<String> = Vec::new();
        for (i, s) in raw.subsystems.into_iter().enumerate() {
            let at = |field: &str| format!("subsystems[{i}].{field}");
            let id = s.id.into_string();
            if labels.contains(&id) {
                push(at("id"), format!("duplicate id `{id}`"));
            }
            labels.push(id.clone());
            if !(s.lambda.is_finite() && s.lambda > 0.0) {
                push(
                    at("lambda"),
                    format!(
                        "|lambda| must be positive (sign is given by `stable`), got {}",
                        s.lambda
                    ),
                );
            }
            if !(s.delta.is_finite() && s.delta > 0.0) {
                push(at("delta"), format!("must be positive, got {}", s.delta));
            }
            if !(s.big_delta.is_finite() && s.delta <= s.big_delta) {
                push(
                    at("Delta"),
                    format!(
                        "must satisfy delta <= Delta, got delta={} Delta={}",
                        s.delta, s.big_delta
                    ),
                );
            }
            if s.f.len() != dims.d {
                push(
                    at("f"),
                    format!("expected {} expressions, got {}", dims.d, s.f.len()),
                );
            }
            if s.h.len() != dims.p_out {
                push(
                    at("h"),
                    format!("expected {} expressions, got {}", dims.p_out, s.h.len()),
                );
            }

            let mut parse_all = |field: &str, texts: &[String], vars: &[&str]| {
                texts
                    .iter()
                    .enumerate()
                    .filter_map(|(j, t)| match parse_expr(t, vars) {
                        Ok(e) => Some(e),
                        Err(e) => {
                            push(format!("subsystems[{i}].{field}[{j}]"), e.to_string());
                            None
                        }
                    })
                    .collect::<Vec<_>>()
            };
            let dynamics = parse_all("f", &s.f, &x_and_v);
            let output = parse_all("h", &s.h, &x_only);
            let lyapunov = match parse_expr(&s.lyapunov, &x_only) {
                Ok(e) => Some(e),
                Err(e) => {
                    push(at("V"), e.to_string());
                    None
                }
            };
            if let Some(lyapunov) = lyapunov {
                subsystems.push(SubsystemSpec {
                    id,
                    class: if s.stable {
                        StabilityClass::Ioss
                    } else {
                        StabilityClass::NonIoss
                    },
                    lambda_abs: s.lambda,
                    delta: s.delta,
                    big_delta: s.big_delta,
                    dynamics,
                    output,
                    lyapunov,
                });
            }
        }

        let mut edges = Vec::new();
        for (k, e) in raw.edges.into_iter().enumerate() {
            let at = |field: &str| format!("edges[{k}].{field}");
            let from = e.from.into_string();
            let to = e.to.into_string();
            let fi = labels.iter().position(|l| *l == from);
            let ti = labels.iter().position(|l| *l == to);
            if fi.is_none() {
                push(at("from"), format!("unknown subsystem `{from}`"));
            }
            if ti.is_none() {
                push(at("to"), format!("unknown subsystem `{to}`"));
            }
            if from == to {
                push(at("to"), "self-loops are not admissible switches".into());
            }
            if !(e.mu.is_finite() && e.mu >= 1.0) {
                push(
                    at("mu"),
                    format!("comparison factor mu must be >= 1, got {}", e.mu),
                );
            }
            if let (Some(from), Some(to)) = (fi, ti) {
                if edges
                    .iter()
                    .any(|x: &EdgeSpec| x.from == from && x.to == to)
                {
                    push(at("to"), "duplicate edge".into());
                }
                edges.push(EdgeSpec { from, to, mu: e.mu });
            }
        }

        if errs.is_empty() {
            for (i, s) in subsystems.iter().enumerate() {
                check_origin_and_sign(i, s, &dims, &mut errs);
            }
        }
        if !errs.is_empty() {
            return Err(SpecError::Invalid(errs));
        }
        Ok(SystemSpec {
            dims,
            subsystems,
            edges,
            defaults: raw.defaults,
        })
    }
}

/// `f_p(0,0) = 0`, `h_p(0) = 0`, `V_p(0) = 0`, and `V_p >= 0` on a fixed
/// sample of the unit box.
fn check_origin_and_sign(i: usize, s: &SubsystemSpec, dims: &Dims, errs: &mut Vec<Violation>) {
    let mut push = |field: &str, message: String| {
        errs.push(Violation {
            path: format!("subsystems[{i}].{field}"),
            message,
        })
    };
    let zero_x = vec![0.0; dims.d];
    let zero_v = vec![0.0; dims.m];
    let mut f0 = vec![0.0; dims.d];
    match s.eval_dynamics(&zero_x, &zero_v, &mut f0) {
        Ok(()) => {
            if let Some((j, val)) = f0.iter().enumerate().find(|(_, v)| v.abs() > 1e-12) {
                push(
                    &format!("f[{j}]"),
                    format!("must vanish at the origin, got {val}"),
                );
            }
        }
        Err(e) => push("f", format!("cannot evaluate at the origin: {e}")),
    }
    match s.eval_output(&zero_x) {
        Ok(h0) => {
            if let Some((j, val)) = h0.iter().enumerate().find(|(_, v)| v.abs() > 1e-12) {
                push(
                    &format!("h[{j}]"),
                    format!("must vanish at the origin, got {val}"),
                );
            }
        }
        Err(e) => push("h", format!("cannot evaluate at the origin: {e}")),
    }
    match s.eval_lyapunov(&zero_x) {
        Ok(v0) if v0.abs() > 1e-12 => push("V", format!("must vanish at the origin, got {v0}")),
        Ok(_) => {}
        Err(e) => push("V", format!("cannot evaluate at the origin: {e}")),
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..64 {
        let x: Vec<f64> = (0..dims.d).map(|_| rng.random_range(-1.0..=1.0)).collect();
        match s.eval_lyapunov(&x) {
            Ok(v) if v < 0.0 => {
                push("V", format!("negative value {v} at {x:?}"));
                break;
            }
            Ok(_) => {}
            Err(e) => {
                push("V", format!("cannot evaluate at {x:?}: {e}"));
                break;
            }
        }
    }
}

pub fn build_graph(spec: &SystemSpec) -> Result<StabilityGraph, GraphError> {
    let vertices = spec
        .subsystems
        .iter()
        .map(|s| VertexSpec::new(s.id.clone(), s.class, s.lambda_abs, s.delta, s.big_delta))
        .collect();
    StabilityGraph::new(vertices, spec.edges.iter().map(|e| (e.from, e.to, e.mu)))
}
