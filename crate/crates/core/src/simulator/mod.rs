//! Fixed-step RK4 integration of the switched system under a given signal,
//! the bound functions `ψ1`, `ψ2`, and the pointwise bound check.

mod assumptions;

pub use assumptions::{
    check_assumptions, gradient_fd, parse_comparison, AssumptionKind, AssumptionProbeConfig,
    AssumptionReport, AssumptionViolation, ComparisonFunction, ProbeError,
};

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::expr::{ExprAst, ExprError};
use crate::graph::StabilityGraph;
use crate::signals::{sample_signal, SignalError, SwitchingSignal};
use crate::system::SystemSpec;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("state left the finite range at t = {time}")]
    BlowUp { time: f64 },
    #[error("expression evaluation failed at t = {time}: {source}")]
    Eval { time: f64, source: ExprError },
    #[error("initial state has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn eval_err(time: f64) -> impl Fn(ExprError) -> SimError {
    move |source| match source {
        ExprError::NonFinite { .. } => SimError::BlowUp { time },
        source => SimError::Eval { time, source },
    }
}

/// Exogenous input `v(t)`, right-continuous.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSignal {
    Constant(Vec<f64>),
    /// `values[k]` holds on `[k·hold, (k+1)·hold)`; the last value persists.
    Piecewise {
        hold: f64,
        values: Vec<Vec<f64>>,
    },
}

impl InputSignal {
    pub fn zero(m: usize) -> Self {
        InputSignal::Constant(vec![0.0; m])
    }

    /// Independent uniform draws in `[-amplitude, amplitude]` per component,
    /// redrawn every `hold` time units.
    pub fn uniform(m: usize, amplitude: f64, hold: f64, horizon: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = (horizon / hold).ceil() as usize + 1;
        let values = (0..count)
            .map(|_| {
                (0..m)
                    .map(|_| {
                        if amplitude > 0.0 {
                            rng.random_range(-amplitude..=amplitude)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        InputSignal::Piecewise { hold, values }
    }

    fn piece(hold: f64, t: f64) -> usize {
        let mut k = (t / hold).floor().max(0.0) as usize;
        if (k + 1) as f64 * hold <= t {
            k += 1;
        } else if k > 0 && k as f64 * hold > t {
            k -= 1;
        }
        k
    }

    pub fn value_at(&self, t: f64) -> &[f64] {
        match self {
            InputSignal::Constant(v) => v,
            InputSignal::Piecewise { hold, values } => {
                &values[Self::piece(*hold, t).min(values.len() - 1)]
            }
        }
    }

    /// First breakpoint strictly after `t`.
    fn next_break(&self, t: f64) -> f64 {
        match self {
            InputSignal::Constant(_) => f64::INFINITY,
            InputSignal::Piecewise { hold, values } => {
                let k = Self::piece(*hold, t);
                if k + 1 >= values.len() {
                    f64::INFINITY
                } else {
                    (k + 1) as f64 * hold
                }
            }
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
    pub active: Vec<usize>,
    /// `V_σ(t)(x(t))`.
    pub lyap: Vec<f64>,
    /// Running `sup |v|` over `[0, t]`.
    pub input_sup: Vec<f64>,
    /// Running `sup |y|` over `[0, t]`, including left limits at switches.
    pub output_sup: Vec<f64>,
}

impl Trajectory {
    pub fn max_state_norm(&self) -> f64 {
        self.states.iter().map(|x| norm(x)).fold(0.0, f64::max)
    }
}

fn rk4_step(
    spec: &SystemSpec,
    p: usize,
    x: &[f64],
    v: &[f64],
    h: f64,
    time: f64,
) -> Result<Vec<f64>, SimError> {
    let sub = &spec.subsystems[p];
    let d = x.len();
    let f = |y: &[f64], out: &mut [f64]| sub.eval_dynamics(y, v, out).map_err(eval_err(time));
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    f(x, &mut k1)?;
    for i in 0..d {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    f(&tmp, &mut k2)?;
    for i in 0..d {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    f(&tmp, &mut k3)?;
    for i in 0..d {
        tmp[i] = x[i] + h * k3[i];
    }
    f(&tmp, &mut k4)?;
    Ok((0..d)
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Integrates over the grid `k·h` (last point clipped to `horizon`). Each
/// grid step is split at switching instants and input breakpoints, so the
/// right-hand side is smooth on every RK4 sub-step.
pub fn integrate(
    spec: &SystemSpec,
    signal: &SwitchingSignal,
    x0: &[f64],
    input: &InputSignal,
    horizon: f64,
    h: f64,
) -> Result<Trajectory, SimError> {
    if !(h.is_finite() && h > 0.0) {
        return Err(SimError::BadStep(h));
    }
    if x0.len() != spec.dims.d {
        return Err(SimError::Dimension {
            expected: spec.dims.d,
            got: x0.len(),
        });
    }
    let steps = ((horizon / h) - 1e-9).ceil().max(0.0) as usize;
    let grid = |k: usize| (k as f64 * h).min(horizon);

    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        outputs: Vec::with_capacity(steps + 1),
        active: Vec::with_capacity(steps + 1),
        lyap: Vec::with_capacity(steps + 1),
        input_sup: Vec::with_capacity(steps + 1),
        output_sup: Vec::with_capacity(steps + 1),
    };
    let mut x = x0.to_vec();
    let mut v_sup = 0.0f64;
    let mut y_sup = 0.0f64;

    let record = |traj: &mut Trajectory, t: f64, x: &[f64], v_sup: f64, y_sup: &mut f64| {
        let p = signal.active_at(t);
        let sub = &spec.subsystems[p];
        let y = sub.eval_output(x).map_err(eval_err(t))?;
        let lyap = sub.eval_lyapunov(x).map_err(eval_err(t))?;
        *y_sup = y_sup.max(norm(&y));
        traj.times.push(t);
        traj.states.push(x.to_vec());
        traj.outputs.push(y);
        traj.active.push(p);
        traj.lyap.push(lyap);
        traj.input_sup.push(v_sup);
        traj.output_sup.push(*y_sup);
        Ok::<(), SimError>(())
    };

    v_sup = v_sup.max(norm(input.value_at(0.0)));
    record(&mut traj, 0.0, &x, v_sup, &mut y_sup)?;
    for k in 0..steps {
        let (a, b) = (grid(k), grid(k + 1));
        let mut cur = a;
        while cur < b {
            let i = signal.interval_at(cur);
            let p = signal.indices()[i];
            let next = b
                .min(signal.interval_end(i).max(cur))
                .min(input.next_break(cur));
            let next = if next > cur { next } else { b };
            let v = input.value_at(cur);
            v_sup = v_sup.max(norm(v));
            x = rk4_step(spec, p, &x, v, next - cur, cur)?;
            if x.iter().any(|c| !c.is_finite()) {
                return Err(SimError::BlowUp { time: next });
            }
            // left limit of the output at the end of the sub-step
            let y = spec.subsystems[p].eval_output(&x).map_err(eval_err(next))?;
            y_sup = y_sup.max(norm(&y));
            cur = next;
        }
        v_sup = v_sup.max(norm(input.value_at(b)));
        record(&mut traj, b, &x, v_sup, &mut y_sup)?;
    }
    Ok(traj)
}

/// Exponent of `ψ1(t)`: signed vertex weights times elapsed dwell plus edge
/// log-factors of every switch in `(0, t]`, the last interval cut at `t`.
pub fn psi1_exponent(graph: &StabilityGraph, signal: &SwitchingSignal, t: f64) -> f64 {
    let n = signal.switches_until(t);
    let (ts, ix) = (signal.instants(), signal.indices());
    let mut e = 0.0;
    for i in 0..n {
        e += graph.vertex_weight(ix[i]) * (ts[i + 1] - ts[i]) + graph.edge_weight(ix[i], ix[i + 1]);
    }
    e + graph.vertex_weight(ix[n]) * (t - ts[n])
}

pub fn psi1(graph: &StabilityGraph, signal: &SwitchingSignal, t: f64) -> f64 {
    psi1_exponent(graph, signal, t).exp()
}

/// `∫_0^d e^{w s} ds`, positive for either sign of `w`.
fn dwell_gain(w: f64, d: f64) -> f64 {
    if w == 0.0 {
        d
    } else {
        (w * d).exp_m1() / w
    }
}

/// Gain from the input and output terms: interval `i` contributes its own
/// gain, carried through every later interval and every later switch,
/// including the switch that ends interval `i`.
pub fn psi2(graph: &StabilityGraph, signal: &SwitchingSignal, t: f64) -> f64 {
    let n = signal.switches_until(t);
    let (ts, ix) = (signal.instants(), signal.indices());
    let mut carried = 0.0f64;
    let mut total = 0.0;
    for i in (0..=n).rev() {
        let end = if i == n { t } else { ts[i + 1] };
        let w = graph.vertex_weight(ix[i]);
        let d = end - ts[i];
        total += carried.exp() * dwell_gain(w, d);
        carried += w * d;
        if i > 0 {
            carried += graph.edge_weight(ix[i - 1], ix[i]);
        }
    }
    total
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheck {
    /// `ψ1 V0 + (γ1(|v|) + γ2(|y|)) ψ2 − V` per grid point.
    pub slack: Vec<f64>,
    pub psi1: Vec<f64>,
    pub psi2: Vec<f64>,
    pub min_slack: f64,
    pub min_time: f64,
}

pub fn check_bound(
    graph: &StabilityGraph,
    signal: &SwitchingSignal,
    traj: &Trajectory,
    gamma1: &ExprAst,
    gamma2: &ExprAst,
) -> Result<BoundCheck, ExprError> {
    let v0 = traj.lyap[0];
    let mut out = BoundCheck {
        slack: Vec::with_capacity(traj.times.len()),
        psi1: Vec::with_capacity(traj.times.len()),
        psi2: Vec::with_capacity(traj.times.len()),
        min_slack: f64::INFINITY,
        min_time: 0.0,
    };
    for (k, &t) in traj.times.iter().enumerate() {
        let p1 = psi1(graph, signal, t);
        let p2 = psi2(graph, signal, t);
        let gain =
            gamma1.eval_slice(&[traj.input_sup[k]])? + gamma2.eval_slice(&[traj.output_sup[k]])?;
        let slack = p1 * v0 + gain * p2 - traj.lyap[k];
        if slack < out.min_slack {
            out.min_slack = slack;
            out.min_time = t;
        }
        out.slack.push(slack);
        out.psi1.push(p1);
        out.psi2.push(p2);
    }
    Ok(out)
}

/// Settings for a batch of seeded runs.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloConfig {
    pub runs: usize,
    pub base_seed: u64,
    pub horizon: f64,
    pub step: f64,
    /// Initial subsystem; drawn uniformly per run when `None`.
    pub start: Option<usize>,
    pub x0_radius: f64,
    pub input_amplitude: f64,
    pub input_hold: f64,
}

impl MonteCarloConfig {
    pub fn for_spec(spec: &SystemSpec) -> Self {
        MonteCarloConfig {
            runs: 10,
            base_seed: spec.defaults.seed,
            horizon: 15.0,
            step: spec.defaults.rk_step,
            start: None,
            x0_radius: 1.0,
            input_amplitude: 0.5,
            input_hold: 0.1,
        }
    }

    pub fn run_seed(&self, k: usize) -> u64 {
        self.base_seed.wrapping_add(k as u64)
    }
}

#[derive(Debug, Clone)]
pub struct Run {
    pub seed: u64,
    pub x0: Vec<f64>,
    pub signal: SwitchingSignal,
    pub input: InputSignal,
    pub trajectory: Trajectory,
    pub psi1: Vec<f64>,
    pub psi2: Vec<f64>,
    pub bound: Option<BoundCheck>,
}

/// One seeded run: start vertex, `x0`, signal and input all derive from
/// `seed`.
pub fn simulate_run(
    spec: &SystemSpec,
    graph: &StabilityGraph,
    cfg: &MonteCarloConfig,
    seed: u64,
    gammas: Option<(&ExprAst, &ExprAst)>,
) -> Result<Run, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = cfg
        .start
        .unwrap_or_else(|| rng.random_range(0..graph.vertex_count()));
    let x0: Vec<f64> = (0..spec.dims.d)
        .map(|_| {
            if cfg.x0_radius > 0.0 {
                rng.random_range(-cfg.x0_radius..=cfg.x0_radius)
            } else {
                0.0
            }
        })
        .collect();
    let signal = sample_signal(graph, start, cfg.horizon, rng.random())?;
    let input = InputSignal::uniform(
        spec.dims.m,
        cfg.input_amplitude,
        cfg.input_hold,
        cfg.horizon,
        rng.random(),
    );
    let trajectory = integrate(spec, &signal, &x0, &input, cfg.horizon, cfg.step)?;
    let (psi1, psi2, bound) = match gammas {
        Some((g1, g2)) => {
            let b = check_bound(graph, &signal, &trajectory, g1, g2).map_err(eval_err(0.0))?;
            (b.psi1.clone(), b.psi2.clone(), Some(b))
        }
        None => (
            trajectory
                .times
                .iter()
                .map(|&t| psi1(graph, &signal, t))
                .collect(),
            trajectory
                .times
                .iter()
                .map(|&t| psi2(graph, &signal, t))
                .collect(),
            None,
        ),
    };
    Ok(Run {
        seed,
        x0,
        signal,
        input,
        trajectory,
        psi1,
        psi2,
        bound,
    })
}

/// Runs `cfg.runs` seeds in parallel; results come back in seed order.
pub fn simulate_batch(
    spec: &SystemSpec,
    graph: &StabilityGraph,
    cfg: &MonteCarloConfig,
    gammas: Option<(&ExprAst, &ExprAst)>,
) -> Vec<Result<Run, SimError>> {
    (0..cfg.runs)
        .into_par_iter()
        .map(|k| simulate_run(spec, graph, cfg, cfg.run_seed(k), gammas))
        .collect()
}

/// Columns: `time, active, x_1..x_d, y_1..y_p, V, psi1, psi2, slack`.
pub fn write_trajectory_csv(w: impl Write, spec: &SystemSpec, run: &Run) -> Result<(), SimError> {
    let traj = &run.trajectory;
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["time".to_string(), "active".to_string()];
    header.extend((1..=spec.dims.d).map(|i| format!("x_{i}")));
    header.extend((1..=spec.dims.p_out).map(|i| format!("y_{i}")));
    header.extend(["V", "psi1", "psi2", "slack"].map(String::from));
    out.write_record(&header)?;
    for k in 0..traj.times.len() {
        let mut row = vec![
            traj.times[k].to_string(),
            spec.subsystems[traj.active[k]].id.clone(),
        ];
        row.extend(traj.states[k].iter().map(f64::to_string));
        row.extend(traj.outputs[k].iter().map(f64::to_string));
        row.push(traj.lyap[k].to_string());
        row.push(run.psi1[k].to_string());
        row.push(run.psi2[k].to_string());
        row.push(
            run.bound
                .as_ref()
                .map(|b| b.slack[k].to_string())
                .unwrap_or_default(),
        );
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enumeration::decompose_prefix;
    use crate::graph::tests::example_graph;
    use crate::graph::{StabilityClass, VertexSpec, DEFAULT_TOLERANCE};
    use crate::system::build_graph;
    use crate::system::tests::example_spec;

    fn scalar_spec(f: &str, lambda: f64) -> SystemSpec {
        let text = format!(
            r#"{{"dims": {{"d": 1, "m": 1, "p_out": 1}},
                "subsystems": [{{"id": "a", "stable": true, "lambda": {lambda},
                  "delta": 1, "Delta": 2, "f": ["{f}"], "h": ["0*x1"], "V": "x1^2"}}]}}"#
        );
        SystemSpec::from_json_str(&text).unwrap()
    }

    fn one_interval(horizon: f64) -> SwitchingSignal {
        SwitchingSignal::new(vec![0.0], vec![0], horizon).unwrap()
    }

    #[test]
    fn decay_matches_exponential() {
        let spec = scalar_spec("-x1", 1.0);
        let tr = integrate(
            &spec,
            &one_interval(1.0),
            &[1.0],
            &InputSignal::zero(1),
            1.0,
            1e-3,
        )
        .unwrap();
        assert_eq!(tr.times.len(), 1001);
        assert_eq!(*tr.times.last().unwrap(), 1.0);
        assert!((tr.states.last().unwrap()[0] - (-1f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn rk4_error_ratio() {
        let spec = scalar_spec("-x1", 1.0);
        let err = |h: f64| {
            let tr = integrate(
                &spec,
                &one_interval(1.0),
                &[1.0],
                &InputSignal::zero(1),
                1.0,
                h,
            )
            .unwrap();
            (tr.states.last().unwrap()[0] - (-1f64).exp()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((8.0..=32.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn zero_field_is_constant() {
        let spec = scalar_spec("0*x1", 1.0);
        let tr = integrate(
            &spec,
            &one_interval(2.0),
            &[0.7],
            &InputSignal::zero(1),
            2.0,
            0.01,
        )
        .unwrap();
        assert!(tr.states.iter().all(|x| x[0] == 0.7));
    }

    #[test]
    fn blow_up_is_reported() {
        let spec = scalar_spec("x1^2", 1.0);
        let err = integrate(
            &spec,
            &one_interval(5.0),
            &[1.0],
            &InputSignal::zero(1),
            5.0,
            1e-2,
        )
        .unwrap_err();
        match err {
            SimError::BlowUp { time } => assert!(time > 0.9 && time < 1.1, "{time}"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn switching_off_grid_is_exact() {
        // x' = -x then x' = +x; switch at 0.3337 between grid points.
        let text = r#"{"dims": {"d": 1, "m": 0, "p_out": 0},
            "subsystems": [
              {"id": "s", "stable": true, "lambda": 1, "delta": 0.1, "Delta": 1, "f": ["-x1"], "V": "x1^2"},
              {"id": "u", "stable": false, "lambda": 1, "delta": 0.1, "Delta": 1, "f": ["x1"], "V": "x1^2"}],
            "edges": [{"from": "s", "to": "u", "mu": 1}]}"#;
        let spec = SystemSpec::from_json_str(text).unwrap();
        let sig = SwitchingSignal::new(vec![0.0, 0.3337], vec![0, 1], 1.0).unwrap();
        let tr = integrate(&spec, &sig, &[1.0], &InputSignal::zero(0), 1.0, 0.01).unwrap();
        let exact = (-0.3337f64 + (1.0 - 0.3337)).exp();
        assert!((tr.states.last().unwrap()[0] - exact).abs() < 1e-9);
        assert_eq!(tr.active[33], 0);
        assert_eq!(tr.active[34], 1);
    }

    #[test]
    fn active_is_right_continuous_on_grid() {
        let spec = example_spec();
        let sig = SwitchingSignal::new(vec![0.0, 3.5, 7.5], vec![0, 1, 0], 8.0).unwrap();
        let tr = integrate(&spec, &sig, &[0.1, 0.1], &InputSignal::zero(1), 8.0, 0.5).unwrap();
        assert_eq!(tr.active[6], 0);
        assert_eq!(tr.active[7], 1);
        assert_eq!(tr.active[14], 1);
        assert_eq!(tr.active[15], 0);
    }

    #[test]
    fn input_pieces_split_steps() {
        // x' = v with v = 1 on [0, 0.25), -1 afterwards, coarse grid.
        let text = r#"{"dims": {"d": 1, "m": 1, "p_out": 0},
            "subsystems": [{"id": 1, "stable": true, "lambda": 1, "delta": 1, "Delta": 2, "f": ["v1"], "V": "x1^2"}]}"#;
        let spec = SystemSpec::from_json_str(text).unwrap();
        let input = InputSignal::Piecewise {
            hold: 0.25,
            values: vec![vec![1.0], vec![-1.0], vec![-1.0], vec![-1.0], vec![-1.0]],
        };
        let tr = integrate(&spec, &one_interval(1.0), &[0.0], &input, 1.0, 0.4).unwrap();
        assert!((tr.states.last().unwrap()[0] - (0.25 - 0.75)).abs() < 1e-12);
        assert_eq!(tr.input_sup.last().copied(), Some(1.0));
    }

    #[test]
    fn psi_single_interval() {
        let g = StabilityGraph::new(
            vec![VertexSpec::new("a", StabilityClass::Ioss, 1.0, 1.0, 2.0)],
            [],
        )
        .unwrap();
        let s = one_interval(2.0);
        assert_eq!(psi1(&g, &s, 0.0), 1.0);
        assert!((psi1(&g, &s, 1.0) - (-1f64).exp()).abs() < 1e-15);
        assert!((psi2(&g, &s, 1.0) - (1.0 - (-1f64).exp())).abs() < 1e-15);
        assert_eq!(psi2(&g, &s, 0.0), 0.0);
        assert!(psi2(&g, &s, 1e-9) < 1e-8);
    }

    #[test]
    fn psi1_at_example_switch() {
        let g = example_graph();
        let s = SwitchingSignal::new(vec![0.0, 3.5, 7.5], vec![0, 1, 0], 10.0).unwrap();
        assert!((psi1_exponent(&g, &s, 7.5) + 9.33).abs() < 1e-12);
        assert!((psi1(&g, &s, 7.5) / (-9.33f64).exp() - 1.0).abs() < 1e-12);
    }

    /// `ψ2` recomputed by propagating the comparison system
    /// `z' = w z + 1` across intervals with jumps `z ← μ z`.
    fn psi2_by_comparison(g: &StabilityGraph, s: &SwitchingSignal, t: f64) -> f64 {
        let mut z = 0.0;
        let (ts, ix) = (s.instants(), s.indices());
        let n = s.switches_until(t);
        for i in 0..=n {
            let end = if i == n { t } else { ts[i + 1] };
            let w = g.vertex_weight(ix[i]);
            let d = end - ts[i];
            z = (w * d).exp() * z + dwell_gain(w, d);
            if i < n {
                z *= g.edge(ix[i], ix[i + 1]).unwrap().mu;
            }
        }
        z
    }

    #[test]
    fn psi2_matches_comparison_system() {
        let g = example_graph();
        for seed in 0..10 {
            let s = sample_signal(&g, 0, 30.0, seed).unwrap();
            for k in 0..=300 {
                let t = k as f64 * 0.1;
                let a = psi2(&g, &s, t);
                let b = psi2_by_comparison(&g, &s, t);
                assert!((a - b).abs() <= 1e-12 * (1.0 + b), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn psi1_exponent_is_walk_sum() {
        let g = example_graph();
        for seed in 0..20 {
            let s = sample_signal(&g, 0, 40.0, seed).unwrap();
            for j in 0..s.instants().len() {
                let e = psi1_exponent(&g, &s, s.instants()[j]);
                assert!((e - s.xi_between(&g, 0, j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn psi1_decreases_over_blocks() {
        let g = example_graph();
        for seed in 0..10 {
            let s = sample_signal(&g, 0, 60.0, seed).unwrap();
            let dec = decompose_prefix(&g, &s.walk(), &s.dwells(), DEFAULT_TOLERANCE).unwrap();
            let mut pos = 0;
            let mut prev = psi1(&g, &s, 0.0);
            for seg in &dec.segments {
                pos += seg.walk.edge_count();
                let now = psi1(&g, &s, s.instants()[pos]);
                assert!(now < prev);
                prev = now;
            }
        }
    }

    #[test]
    fn zero_state_zero_input() {
        let spec = example_spec();
        let g = build_graph(&spec).unwrap();
        let s = sample_signal(&g, 0, 15.0, 3).unwrap();
        let tr = integrate(&spec, &s, &[0.0, 0.0], &InputSignal::zero(1), 15.0, 0.01).unwrap();
        assert!(tr.lyap.iter().all(|&v| v == 0.0));
        let gm = parse_comparison("s^2").unwrap();
        let b = check_bound(&g, &s, &tr, &gm.expr, &gm.expr).unwrap();
        assert!(b.min_slack >= 0.0);
    }

    #[test]
    fn single_stable_mode_bound_without_gains() {
        // V = x^2, x' = -x: V' = -2V, so lambda = 2 is tight.
        let spec = scalar_spec("-x1", 2.0);
        let g = build_graph(&spec).unwrap();
        let s = one_interval(3.0);
        let tr = integrate(&spec, &s, &[1.0], &InputSignal::zero(1), 3.0, 1e-3).unwrap();
        let zero = parse_comparison("0*s").unwrap();
        let b = check_bound(&g, &s, &tr, &zero.expr, &zero.expr).unwrap();
        assert!(b.min_slack >= -1e-10, "{}", b.min_slack);
    }

    #[test]
    fn batch_is_deterministic_and_ordered() {
        let spec = example_spec();
        let g = build_graph(&spec).unwrap();
        let mut cfg = MonteCarloConfig::for_spec(&spec);
        cfg.runs = 3;
        cfg.step = 0.01;
        let a = simulate_batch(&spec, &g, &cfg, None);
        let b = simulate_batch(&spec, &g, &cfg, None);
        for (k, (x, y)) in a.iter().zip(&b).enumerate() {
            let (x, y) = (x.as_ref().unwrap(), y.as_ref().unwrap());
            assert_eq!(x.seed, cfg.run_seed(k));
            assert_eq!(x.trajectory, y.trajectory);
        }
    }

    #[test]
    fn csv_columns() {
        let spec = example_spec();
        let g = build_graph(&spec).unwrap();
        let mut cfg = MonteCarloConfig::for_spec(&spec);
        cfg.step = 0.5;
        cfg.horizon = 2.0;
        let run = simulate_run(&spec, &g, &cfg, 1, None).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &spec, &run).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("time,active,x_1,x_2,y_1,V,psi1,psi2,slack")
        );
        assert_eq!(lines.count(), 5);
    }
}
