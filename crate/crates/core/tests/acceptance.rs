//! Acceptance criteria, one test per criterion. Each prints a single
//! `criterion N: PASS|FAIL` line with its measured values (visible with
//! `--nocapture`, or on failure).

mod common;

use std::time::{Duration, Instant};

use common::*;
use ioss_core::certifier::{
    build_reduced_graph, certify, check_c1, max_cycle_mean, CertificationReport, CycleMean, Overall,
};
use ioss_core::enumeration::{decompose_prefix, enumerate_cycles, DEFAULT_CYCLE_CAP};
use ioss_core::graph::{DwellAssignment, StabilityClass, StabilityGraph, DEFAULT_TOLERANCE};
use ioss_core::signals::{sample_signal, stats};
use ioss_core::simulator::{
    check_assumptions, integrate, simulate_run, AssumptionProbeConfig, InputSignal,
    MonteCarloConfig,
};
use ioss_core::system::{build_graph, SystemSpec};
use rand::Rng;

/// Tolerances, pinned.
const WEIGHT_TOL: f64 = 1e-4;
const SUM_TOL: f64 = 0.01;
/// The printed joint value -5.677 is off the value implied by the printed
/// weights (-5.717); widened for that figure only.
const ROUNDED_JOINT_TOL: f64 = 0.05;
const SUPREMUM_TOL: f64 = 1e-12;
const IDENTITY_TOL: f64 = 1e-9;
const RK_RATIO: (f64, f64) = (8.0, 32.0);

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn report(id: u32, name: &str, outcome: Outcome) {
    match outcome {
        Ok(detail) => println!("criterion {id}: PASS  {name} ({detail})"),
        Err(why) => {
            println!("criterion {id}: FAIL  {name} ({why})");
            panic!("criterion {id} failed: {why}");
        }
    }
}

fn within_time(start: Instant, limit: Duration) -> Result<Duration, String> {
    let took = start.elapsed();
    if took < limit {
        Ok(took)
    } else {
        Err(format!("took {took:?}, limit {limit:?}"))
    }
}

fn example_graph() -> StabilityGraph {
    build_graph(&example_spec()).unwrap()
}

fn perturbed(f: impl FnOnce(&mut serde_json::Value)) -> SystemSpec {
    let mut v = example_json();
    f(&mut v);
    SystemSpec::from_value(v).unwrap()
}

fn certify_spec(spec: &SystemSpec) -> CertificationReport {
    certify(spec, DEFAULT_TOLERANCE, DEFAULT_CYCLE_CAP).unwrap()
}

#[test]
#[allow(clippy::approx_constant)]
fn criterion_1_example_weights() {
    let start = Instant::now();
    let outcome = (|| {
        let g = example_graph();
        let checks = [
            ("w(1)", g.vertex_weight(0), -3.5),
            ("w(2)", g.vertex_weight(1), 0.73),
            ("w(3)", g.vertex_weight(2), 0.73),
            ("w(1,2)", g.edge_weight(0, 1), 0.0),
            ("w(2,1)", g.edge_weight(1, 0), 0.0),
            ("w(3,1)", g.edge_weight(2, 0), 0.0),
            ("w(1,3)", g.edge_weight(0, 2), 0.6931),
        ];
        for (name, got, want) in checks {
            ensure!(
                (got - want).abs() <= WEIGHT_TOL,
                "{name} = {got}, expected {want}"
            );
        }
        let took = within_time(start, Duration::from_secs(1))?;
        Ok(format!("7 weights within {WEIGHT_TOL}, {took:?}"))
    })();
    report(1, "example weights", outcome);
}

#[test]
fn criterion_2_example_sums() {
    let outcome = (|| {
        let g = example_graph();
        let cycles = [
            (["1", "2", "1"], -9.33),
            (["1", "3", "1"], -8.64),
            (["2", "1", "2"], -9.33),
            (["3", "1", "3"], -8.64),
        ];
        let mut seen = Vec::new();
        for (labels, want) in cycles {
            let xi = g.xi_worst(&g.walk(&labels).unwrap()).unwrap();
            ensure!(
                (xi - want).abs() <= SUM_TOL,
                "cycle {labels:?}: {xi}, expected {want}"
            );
            seen.push(format!("{xi:.4}"));
        }
        let joint = |a: &[&str], b: &[&str]| {
            g.is_jointly_contractive(&g.walk(a).unwrap(), &g.walk(b).unwrap(), DEFAULT_TOLERANCE)
                .unwrap()
        };
        let j1 = joint(&["2", "1"], &["1", "3", "1"]);
        let j2 = joint(&["3", "1"], &["1", "2", "1"]);
        ensure!(j1.verdict && j2.verdict, "joint verdicts {j1:?} {j2:?}");
        ensure!(
            (j1.xi + 5.677).abs() <= ROUNDED_JOINT_TOL,
            "(2,1)+(1,3,1) = {}, expected -5.677",
            j1.xi
        );
        ensure!(
            (j2.xi + 6.41).abs() <= SUM_TOL,
            "(3,1)+(1,2,1) = {}, expected -6.41",
            j2.xi
        );
        Ok(format!(
            "cycles {}, joints {:.4} {:.4}",
            seen.join(" "),
            j1.xi,
            j2.xi
        ))
    })();
    report(2, "example contractivity sums", outcome);
}

#[test]
fn criterion_3_example_certification() {
    let outcome = (|| {
        let base = certify_spec(&example_spec());
        ensure!(
            base.overall == Overall::Certified,
            "example: {}",
            base.overall
        );

        let mut failures = Vec::new();
        let mut notes = vec![format!("example {}", base.overall)];

        let long_dwell = certify_spec(&perturbed(|v| v["subsystems"][1]["Delta"] = 17.0.into()));
        notes.push(format!("Delta2=17 {}", long_dwell.overall));
        check_witnesses(&long_dwell)?;
        if long_dwell.overall != Overall::RefutedC2 {
            let c = long_dwell.failing_cycles().next().map(|c| {
                format!(
                    "{} xi={:.4}",
                    long_dwell.graph.format_walk(&c.cycle),
                    c.xi_worst
                )
            });
            failures.push(format!(
                "Delta2=17 gives {} (C1 also fails: {}), expected REFUTED_C2",
                long_dwell.overall,
                c.unwrap_or_default()
            ));
        }

        let heavy = certify_spec(&perturbed(|v| v["edges"][1]["mu"] = 13f64.exp().into()));
        notes.push(format!("mu13=e^13 {}", heavy.overall));
        check_witnesses(&heavy)?;
        let g = &heavy.graph;
        if heavy.overall != Overall::RefutedC1
            || !heavy
                .failing_cycles()
                .any(|c| g.format_walk(&c.cycle) == "1,3,1")
        {
            failures.push(format!(
                "mu13=e^13 gives {}, expected REFUTED_C1 on 1,3,1",
                heavy.overall
            ));
        }
        if failures.is_empty() {
            Ok(notes.join(", "))
        } else {
            Err(failures.join("; "))
        }
    })();
    report(3, "example certification and perturbations", outcome);
}

/// Every failing entry recomputes to a non-contractive value.
fn check_witnesses(r: &CertificationReport) -> Result<(), String> {
    let g = &r.graph;
    ensure!(
        r.overall == Overall::Certified
            || r.failing_cycles().count() + r.failing_pairs().count() > 0,
        "{} without witnesses",
        r.overall
    );
    for c in r.failing_cycles() {
        let xi = xi_worst_direct(g, c.cycle.vertices());
        ensure!(
            xi > -DEFAULT_TOLERANCE,
            "cycle witness {} recomputes to {xi}",
            g.format_walk(&c.cycle)
        );
    }
    for p in r.failing_pairs() {
        let xi =
            xi_worst_direct(g, p.simple_walk.vertices()) + xi_worst_direct(g, p.cycle.vertices());
        ensure!(xi > -DEFAULT_TOLERANCE, "pair witness recomputes to {xi}");
    }
    Ok(())
}

#[test]
fn criterion_4_oracle_equivalence() {
    let start = Instant::now();
    let outcome = (|| {
        let mut rng = seeded(4);
        let (mut c1_true, mut cyclic) = (0, 0);
        for k in 0..100 {
            let g = random_graph(&mut rng, 7);
            let cycles = enumerate_cycles(&g, DEFAULT_CYCLE_CAP).map_err(|e| e.to_string())?;

            let naive = naive_cycles(&g);
            let ours: Vec<Vec<usize>> = cycles
                .distinct()
                .iter()
                .map(|w| w.vertices().to_vec())
                .collect();
            ensure!(
                ours == naive,
                "graph {k}: enumeration differs from DFS oracle"
            );

            let c1 = check_c1(&g, &cycles, DEFAULT_TOLERANCE)
                .iter()
                .all(|c| c.verdict);
            let brute = naive
                .iter()
                .all(|c| xi_worst_direct(&g, c) <= -DEFAULT_TOLERANCE);
            ensure!(c1 == brute, "graph {k}: C1 {c1}, brute force {brute}");
            c1_true += usize::from(c1);

            let max_xi = naive
                .iter()
                .map(|c| xi_worst_direct(&g, c))
                .reduce(f64::max);
            match (max_cycle_mean(&build_reduced_graph(&g)), max_xi) {
                (CycleMean::Acyclic, None) => {}
                (CycleMean::Mean(m), Some(x)) => {
                    ensure!(
                        m.signum() == x.signum(),
                        "graph {k}: mean {m}, max cycle sum {x}"
                    );
                    cyclic += 1;
                }
                (m, x) => return Err(format!("graph {k}: mean {m:?}, max cycle sum {x:?}")),
            }
        }
        let took = within_time(start, Duration::from_secs(60))?;
        Ok(format!(
            "100 graphs, {cyclic} cyclic, {c1_true} pass C1, 0 disagreements, {took:?}"
        ))
    })();
    report(4, "oracle equivalence on random graphs", outcome);
}

#[test]
fn criterion_5_supremum() {
    let outcome = (|| {
        let mut rng = seeded(5);
        let mut pairs = 0;
        let mut worst_gap = f64::INFINITY;
        while pairs < 50 {
            let g = random_graph(&mut rng, 7);
            let Some(w) = random_walk(&g, &mut rng, 12) else {
                continue;
            };
            pairs += 1;
            let worst = g.xi_worst(&w).unwrap();
            let extreme = g.xi_of(&w, &g.worst_dwell(&w)).unwrap();
            ensure!(
                (extreme - worst).abs() <= SUPREMUM_TOL,
                "extreme {extreme} vs {worst}"
            );
            for _ in 0..1000 {
                let d = w.vertices()[..w.edge_count()]
                    .iter()
                    .map(|&v| {
                        let vx = g.vertex(v);
                        rng.random_range(vx.delta..=vx.big_delta)
                    })
                    .collect();
                let xi = g.xi_of(&w, &DwellAssignment::new(d)).unwrap();
                ensure!(xi <= worst, "sampled {xi} above supremum {worst}");
                worst_gap = worst_gap.min(worst - xi);
            }
        }
        Ok(format!(
            "50 walks x 1000 samples, smallest gap {worst_gap:.3e}"
        ))
    })();
    report(5, "worst-case dwell is the supremum", outcome);
}

#[test]
fn criterion_6_switching_identities() {
    let outcome = (|| {
        let g = example_graph();
        let mut rng = seeded(6);
        let mut worst = 0.0f64;
        for seed in 0..20 {
            let s = sample_signal(&g, 0, 80.0, seed).map_err(|e| e.to_string())?;
            let n = s.switch_count();
            ensure!(n >= 3, "signal {seed} has only {n} switches");
            for _ in 0..10 {
                let a = rng.random_range(0..n);
                let b = rng.random_range(a + 1..=n);
                let direct = s.xi_between(&g, a, b);
                let st = stats(&s, s.instants()[a], s.instants()[b]).map_err(|e| e.to_string())?;
                let agg = st.aggregate_xi(&g);
                ensure!(
                    (direct - agg).abs() <= IDENTITY_TOL,
                    "window {a}..{b}: {direct} vs {agg}"
                );
                worst = worst.max((direct - agg).abs());
                if b - a >= 2 {
                    let k = rng.random_range(a + 1..b);
                    let split = s.xi_between(&g, a, k) + s.xi_between(&g, k, b);
                    let parts = s.slice(a, k).xi_between(&g, 0, k - a)
                        + s.slice(k, b).xi_between(&g, 0, b - k);
                    ensure!(
                        (direct - split).abs() <= IDENTITY_TOL,
                        "split at {k}: {direct} vs {split}"
                    );
                    ensure!(
                        (direct - parts).abs() <= IDENTITY_TOL,
                        "sliced at {k}: {direct} vs {parts}"
                    );
                    worst = worst.max((direct - parts).abs());
                }
            }
        }
        Ok(format!(
            "20 signals x 10 windows, largest deviation {worst:.2e}"
        ))
    })();
    report(6, "aggregate and additivity identities", outcome);
}

/// Run-independent ceiling on `ψ2` for a certified graph.
///
/// Every interval's gain is at most `G`. The carried exponent after interval
/// `i` covers the following walk, which splits greedily into blocks of at
/// most `n` edges, each with sum at most `-ε`, plus a residual of fewer than
/// `n` edges, one edge weight and the partial last dwell; `C0` bounds those
/// leftovers. Summing the geometric series over blocks gives the ceiling.
fn psi2_ceiling(g: &StabilityGraph, report: &CertificationReport) -> f64 {
    let n = g.vertex_count() as f64;
    let eps = report
        .per_cycle
        .iter()
        .map(|c| c.margin)
        .chain(report.per_pair.iter().map(|p| p.margin))
        .fold(f64::INFINITY, f64::min);
    let gain = g
        .vertices()
        .iter()
        .map(|v| {
            let l = v.lambda_abs;
            match v.class {
                StabilityClass::Ioss => (1.0 - (-l * v.big_delta).exp()) / l,
                StabilityClass::NonIoss => ((l * v.big_delta).exp() - 1.0) / l,
            }
        })
        .fold(0.0, f64::max);
    let max_edge = g.edges().iter().map(|e| e.weight).fold(0.0, f64::max);
    let step = g
        .edges()
        .iter()
        .map(|e| {
            let u = g.vertex(e.from);
            u.weight * u.worst_dwell() + e.weight
        })
        .fold(0.0, f64::max);
    let partial = g
        .vertices()
        .iter()
        .map(|v| v.weight * v.big_delta)
        .fold(0.0, f64::max);
    let c0 = (max_edge + (n - 1.0) * step + partial).exp();
    gain * (1.0 + c0 * n / (1.0 - (-eps).exp()))
}

#[test]
fn criterion_7_simulation_boundedness() {
    let start = Instant::now();
    let outcome = (|| {
        let spec = example_spec();
        let g = build_graph(&spec).unwrap();
        let cert = certify_spec(&spec);
        ensure!(cert.overall == Overall::Certified, "example not certified");
        let ceiling = psi2_ceiling(&g, &cert);

        let cfg = MonteCarloConfig {
            runs: 10,
            base_seed: 7,
            horizon: 15.0,
            step: 1e-3,
            start: None,
            x0_radius: 1.0,
            input_amplitude: 0.5,
            input_hold: 0.1,
        };
        let mut max_psi2 = 0.0f64;
        let mut max_norm = 0.0f64;
        let mut blocks = 0;
        for k in 0..cfg.runs {
            let run = simulate_run(&spec, &g, &cfg, cfg.run_seed(k), None)
                .map_err(|e| format!("run {k}: {e}"))?;
            let norm = run.trajectory.max_state_norm();
            ensure!(norm.is_finite(), "run {k}: non-finite state");
            max_norm = max_norm.max(norm);
            let p2 = run.psi2.iter().copied().fold(0.0, f64::max);
            ensure!(
                p2 < ceiling,
                "run {k}: psi2 reaches {p2}, ceiling {ceiling}"
            );
            max_psi2 = max_psi2.max(p2);

            let s = &run.signal;
            let dec = decompose_prefix(&g, &s.walk(), &s.dwells(), DEFAULT_TOLERANCE)
                .map_err(|e| format!("run {k}: {e}"))?;
            let mut pos = 0;
            let mut prev = ioss_core::simulator::psi1(&g, s, 0.0);
            for seg in &dec.segments {
                pos += seg.walk.edge_count();
                let now = ioss_core::simulator::psi1(&g, s, s.instants()[pos]);
                ensure!(
                    now < prev,
                    "run {k}: psi1 {now} after block ending at {pos}, was {prev}"
                );
                prev = now;
                blocks += 1;
            }
        }
        let took = within_time(start, Duration::from_secs(30))?;
        Ok(format!(
            "10 runs, max |x| {max_norm:.3}, max psi2 {max_psi2:.3} < {ceiling:.3e}, {blocks} blocks decreasing, {took:?}"
        ))
    })();
    report(7, "simulation boundedness", outcome);
}

#[test]
fn criterion_8_integrator_order() {
    let outcome = (|| {
        let spec = SystemSpec::from_json_str(
            r#"{"dims": {"d": 1, "m": 0, "p_out": 0},
                "subsystems": [{"id": 1, "stable": true, "lambda": 1, "delta": 1, "Delta": 1,
                                "f": ["-x1"], "V": "x1^2"}]}"#,
        )
        .unwrap();
        let g = build_graph(&spec).unwrap();
        let signal = sample_signal(&g, 0, 1.0, 0).unwrap();
        let err = |h: f64| {
            let tr = integrate(&spec, &signal, &[1.0], &InputSignal::zero(0), 1.0, h).unwrap();
            (tr.states.last().unwrap()[0] - (-1f64).exp()).abs()
        };
        let (coarse, fine) = (err(0.1), err(0.05));
        let ratio = coarse / fine;
        ensure!(
            (RK_RATIO.0..=RK_RATIO.1).contains(&ratio),
            "error ratio {ratio} ({coarse:.3e} / {fine:.3e})"
        );
        Ok(format!("ratio {ratio:.2}"))
    })();
    report(8, "RK4 convergence order", outcome);
}

#[test]
fn criterion_9_assumption_probe() {
    let outcome = (|| {
        let spec = example_spec();
        let cfg = AssumptionProbeConfig::symmetric(&spec, 2.0, 1.0);
        ensure!(
            cfg.samples == 10_000,
            "default sample count {}",
            cfg.samples
        );
        let clean = check_assumptions(&spec, &cfg).map_err(|e| e.to_string())?;
        ensure!(
            clean.clean(),
            "{} violations, first {:?}",
            clean.violations.len(),
            clean.violations.first()
        );

        let mut bad = example_spec();
        bad.subsystems[0].lambda_abs = 100.0;
        let cfg = AssumptionProbeConfig::symmetric(&bad, 2.0, 1.0);
        let dirty = check_assumptions(&bad, &cfg).map_err(|e| e.to_string())?;
        ensure!(!dirty.clean(), "lambda_1 = 100 passed the probe");
        Ok(format!(
            "example clean with gamma = {}; corrupted rate: {} violations",
            clean.gamma1,
            dirty.violations.len()
        ))
    })();
    report(9, "assumption probe", outcome);
}
