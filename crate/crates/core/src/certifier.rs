//! Certificate check: every rooted elementary cycle must be contractive (C1),
//! and every simple walk entering a cycle's root from outside the cycle must
//! be jointly contractive with it (C2).
//!
//! The maximum cycle mean of the reduced graph is computed alongside as a
//! cross-check on C1. It is not the decision path.

use std::collections::{BTreeSet, HashMap};
use std::fmt::{self, Write as _};

use rayon::prelude::*;
use thiserror::Error;

use crate::enumeration::{enumerate_cycles, simple_walks_capped, CycleSet, EnumerationError};
use crate::graph::{Contractivity, GraphError, StabilityGraph, Walk};
use crate::system::{build_graph, SystemSpec};

/// The graph with vertex weights folded into outgoing edges at their worst
/// dwell: `w̄(u,v) = w(u,v) + w(u)·D_worst(u)`. The weight of a walk here is
/// its worst-case contractivity sum on the original graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedGraph {
    vertex_count: usize,
    /// `(from, to, w̄)` in the source graph's edge order.
    edges: Vec<(usize, usize, f64)>,
    lookup: HashMap<(usize, usize), f64>,
}

impl ReducedGraph {
    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn weight(&self, from: usize, to: usize) -> Option<f64> {
        self.lookup.get(&(from, to)).copied()
    }

    /// Sum of reduced edge weights along `walk`; `None` if an edge is missing.
    pub fn path_weight(&self, walk: &Walk) -> Option<f64> {
        walk.steps().map(|(a, b)| self.weight(a, b)).sum()
    }
}

pub fn build_reduced_graph(graph: &StabilityGraph) -> ReducedGraph {
    let edges: Vec<(usize, usize, f64)> = graph
        .edges()
        .iter()
        .map(|e| {
            let u = graph.vertex(e.from);
            (e.from, e.to, e.weight + u.weight * u.worst_dwell())
        })
        .collect();
    let lookup = edges.iter().map(|&(a, b, w)| ((a, b), w)).collect();
    ReducedGraph {
        vertex_count: graph.vertex_count(),
        edges,
        lookup,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CycleMean {
    Acyclic,
    Mean(f64),
}

impl fmt::Display for CycleMean {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CycleMean::Acyclic => f.write_str("acyclic"),
            CycleMean::Mean(m) => write!(f, "{m}"),
        }
    }
}

/// Karp's maximum cycle mean. `D_k(v)` is the heaviest walk with exactly `k`
/// edges ending at `v`, starting anywhere.
pub fn max_cycle_mean(reduced: &ReducedGraph) -> CycleMean {
    let n = reduced.vertex_count;
    if n == 0 {
        return CycleMean::Acyclic;
    }
    let mut table = vec![vec![f64::NEG_INFINITY; n]; n + 1];
    table[0].iter_mut().for_each(|d| *d = 0.0);
    for k in 1..=n {
        let (done, rest) = table.split_at_mut(k);
        let prev = &done[k - 1];
        let cur = &mut rest[0];
        for &(a, b, w) in &reduced.edges {
            if prev[a] > f64::NEG_INFINITY {
                cur[b] = cur[b].max(prev[a] + w);
            }
        }
    }
    let mut best: Option<f64> = None;
    for (v, &dn) in table[n].iter().enumerate() {
        if dn == f64::NEG_INFINITY {
            continue;
        }
        let worst = (0..n)
            .filter(|&k| table[k][v] > f64::NEG_INFINITY)
            .map(|k| (dn - table[k][v]) / (n - k) as f64)
            .fold(f64::INFINITY, f64::min);
        best = Some(best.map_or(worst, |b: f64| b.max(worst)));
    }
    best.map_or(CycleMean::Acyclic, CycleMean::Mean)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleCheck {
    pub root: usize,
    pub cycle: Walk,
    pub xi_worst: f64,
    pub margin: f64,
    pub verdict: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairCheck {
    pub root: usize,
    pub simple_walk: Walk,
    pub cycle: Walk,
    pub joint_xi: f64,
    pub margin: f64,
    pub verdict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Precheck {
    pub max_cycle_mean: CycleMean,
    /// False when every cycle passed C1 yet the maximum mean is nonnegative.
    pub consistent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Overall {
    Certified,
    RefutedC1,
    RefutedC2,
    InconclusiveCap,
}

impl fmt::Display for Overall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Overall::Certified => "CERTIFIED",
            Overall::RefutedC1 => "REFUTED_C1",
            Overall::RefutedC2 => "REFUTED_C2",
            Overall::InconclusiveCap => "INCONCLUSIVE_CAP",
        })
    }
}

pub const NO_CYCLES_WARNING: &str =
    "graph has no cycles: no admissible infinite switching exists beyond transient prefixes";

#[derive(Debug, Clone)]
pub struct CertificationReport {
    pub overall: Overall,
    pub tolerance: f64,
    pub cycle_cap: usize,
    pub per_cycle: Vec<CycleCheck>,
    pub per_pair: Vec<PairCheck>,
    pub precheck: Precheck,
    pub warnings: Vec<String>,
    pub graph: StabilityGraph,
    pub reduced: ReducedGraph,
}

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error("cannot build switching graph: {0}")]
    Graph(#[from] GraphError),
}

/// One verdict per rooted cycle. Sums are computed once per distinct cycle;
/// the total over a cycle does not depend on where it is read from.
pub fn check_c1(graph: &StabilityGraph, cycles: &CycleSet, tolerance: f64) -> Vec<CycleCheck> {
    let sums: HashMap<&Walk, f64> = cycles
        .distinct()
        .par_iter()
        .map(|c| (c, graph.xi_worst(c).expect("enumerated cycle is a walk")))
        .collect();
    cycles
        .iter()
        .map(|(root, cycle)| {
            let canon = canonical(cycle);
            let xi = sums[&canon];
            let c = Contractivity::from_xi(xi, tolerance);
            CycleCheck {
                root,
                cycle: cycle.clone(),
                xi_worst: xi,
                margin: c.margin,
                verdict: c.verdict,
            }
        })
        .collect()
}

/// Rotation starting at the smallest vertex.
fn canonical(cycle: &Walk) -> Walk {
    let body = &cycle.vertices()[..cycle.edge_count()];
    let k = (0..body.len()).min_by_key(|&i| body[i]).unwrap_or(0);
    cycle.rotate(k)
}

/// Pairs each rooted cycle `W` at `v` with every simple walk `u → v` for
/// `u ∉ V(W)`. Simple walks are enumerated once per `(u, v)`, each list
/// capped at `cap`.
pub fn check_c2(
    graph: &StabilityGraph,
    cycles: &CycleSet,
    tolerance: f64,
    cap: usize,
) -> Result<Vec<PairCheck>, EnumerationError> {
    let n = graph.vertex_count();
    let mut needed = BTreeSet::new();
    for (v, cycle) in cycles.iter() {
        for u in (0..n).filter(|&u| !cycle.contains(u)) {
            needed.insert((u, v));
        }
    }
    let walks: HashMap<(usize, usize), Vec<(Walk, f64)>> = needed
        .into_par_iter()
        .map(|(u, v)| {
            let list = simple_walks_capped(graph, u, v, cap)?
                .into_iter()
                .map(|w| {
                    let xi = graph.xi_worst(&w).expect("enumerated walk");
                    (w, xi)
                })
                .collect();
            Ok(((u, v), list))
        })
        .collect::<Result<_, EnumerationError>>()?;

    let rooted: Vec<(usize, &Walk)> = cycles.iter().collect();
    let checks: Vec<Vec<PairCheck>> = rooted
        .par_iter()
        .map(|&(v, cycle)| {
            let cycle_xi = graph.xi_worst(cycle).expect("enumerated cycle");
            let mut out = Vec::new();
            for u in (0..n).filter(|&u| !cycle.contains(u)) {
                for (walk, walk_xi) in &walks[&(u, v)] {
                    let c = Contractivity::from_xi(walk_xi + cycle_xi, tolerance);
                    out.push(PairCheck {
                        root: v,
                        simple_walk: walk.clone(),
                        cycle: cycle.clone(),
                        joint_xi: c.xi,
                        margin: c.margin,
                        verdict: c.verdict,
                    });
                }
            }
            out
        })
        .collect();
    Ok(checks.into_iter().flatten().collect())
}

pub fn certify(
    spec: &SystemSpec,
    tolerance: f64,
    cap: usize,
) -> Result<CertificationReport, CertifyError> {
    let graph = build_graph(spec)?;
    Ok(certify_graph(&graph, tolerance, cap))
}

/// Enumerate, pre-check, C1, C2. When both conditions fail the report is
/// `REFUTED_C1`; the C2 list is still filled in.
pub fn certify_graph(graph: &StabilityGraph, tolerance: f64, cap: usize) -> CertificationReport {
    let reduced = build_reduced_graph(graph);
    let mean = max_cycle_mean(&reduced);
    let mut report = CertificationReport {
        overall: Overall::InconclusiveCap,
        tolerance,
        cycle_cap: cap,
        per_cycle: Vec::new(),
        per_pair: Vec::new(),
        precheck: Precheck {
            max_cycle_mean: mean,
            consistent: true,
        },
        warnings: Vec::new(),
        graph: graph.clone(),
        reduced,
    };
    let cycles = match enumerate_cycles(graph, cap) {
        Ok(c) => c,
        Err(e) => {
            report
                .warnings
                .push(format!("cycle enumeration stopped: {e}"));
            return report;
        }
    };
    if cycles.is_empty() {
        report.warnings.push(NO_CYCLES_WARNING.to_string());
    }
    report.per_cycle = check_c1(graph, &cycles, tolerance);
    let c1 = report.per_cycle.iter().all(|c| c.verdict);
    report.precheck.consistent = match mean {
        CycleMean::Mean(m) => !(c1 && m >= 0.0),
        CycleMean::Acyclic => cycles.is_empty(),
    };
    if !report.precheck.consistent {
        report.warnings.push(format!(
            "internal inconsistency: C1 verdict {c1} disagrees with maximum cycle mean {mean}"
        ));
    }
    match check_c2(graph, &cycles, tolerance, cap) {
        Ok(pairs) => report.per_pair = pairs,
        Err(e) => {
            report
                .warnings
                .push(format!("simple-walk enumeration stopped: {e}"));
            if c1 {
                return report;
            }
        }
    }
    let c2 = report.per_pair.iter().all(|p| p.verdict);
    report.overall = match (c1, c2) {
        (false, _) => Overall::RefutedC1,
        (true, false) => Overall::RefutedC2,
        (true, true) => Overall::Certified,
    };
    report
}

impl CertificationReport {
    pub fn c1_holds(&self) -> bool {
        self.per_cycle.iter().all(|c| c.verdict)
    }

    pub fn c2_holds(&self) -> bool {
        self.per_pair.iter().all(|p| p.verdict)
    }

    pub fn failing_cycles(&self) -> impl Iterator<Item = &CycleCheck> {
        self.per_cycle.iter().filter(|c| !c.verdict)
    }

    pub fn failing_pairs(&self) -> impl Iterator<Item = &PairCheck> {
        self.per_pair.iter().filter(|p| !p.verdict)
    }

    /// Plain-text report. `config` lines are echoed first as `key: value`.
    pub fn to_text(&self, config: &[(&str, String)]) -> String {
        let g = &self.graph;
        let mut s = String::new();
        let _ = writeln!(s, "# IOSS certification report");
        let _ = writeln!(s, "overall: {}", self.overall);
        let _ = writeln!(s, "tolerance: {:?}", self.tolerance);
        let _ = writeln!(s, "max_cycles: {}", self.cycle_cap);
        for (k, v) in config {
            let _ = writeln!(s, "{k}: {v}");
        }

        let _ = writeln!(s, "\n[vertices]\nlabel class lambda_abs weight delta Delta");
        for v in g.vertices() {
            let class = match v.class {
                crate::graph::StabilityClass::Ioss => "IOSS",
                crate::graph::StabilityClass::NonIoss => "non-IOSS",
            };
            let _ = writeln!(
                s,
                "{} {} {} {} {} {}",
                v.label, class, v.lambda_abs, v.weight, v.delta, v.big_delta
            );
        }
        let _ = writeln!(s, "\n[edges]\nfrom to mu weight reduced_weight");
        for (e, &(_, _, wbar)) in g.edges().iter().zip(self.reduced.edges()) {
            let _ = writeln!(
                s,
                "{} {} {} {} {}",
                g.label(e.from),
                g.label(e.to),
                e.mu,
                e.weight,
                wbar
            );
        }
        let _ = writeln!(s, "\n[precheck]");
        let _ = writeln!(s, "max_cycle_mean: {}", self.precheck.max_cycle_mean);
        let _ = writeln!(s, "consistent: {}", self.precheck.consistent);

        let verdict = |b: bool| if b { "pass" } else { "FAIL" };
        let _ = writeln!(s, "\n[cycles]\nroot cycle xi_worst margin verdict");
        for c in &self.per_cycle {
            let _ = writeln!(
                s,
                "{} {} {} {} {}",
                g.label(c.root),
                g.format_walk(&c.cycle),
                c.xi_worst,
                c.margin,
                verdict(c.verdict)
            );
        }
        let _ = writeln!(
            s,
            "\n[pairs]\nroot simple_walk cycle joint_xi margin verdict"
        );
        for p in &self.per_pair {
            let _ = writeln!(
                s,
                "{} {} {} {} {} {}",
                g.label(p.root),
                g.format_walk(&p.simple_walk),
                g.format_walk(&p.cycle),
                p.joint_xi,
                p.margin,
                verdict(p.verdict)
            );
        }
        let _ = writeln!(s, "\n[witnesses]");
        for c in self.failing_cycles() {
            let _ = writeln!(
                s,
                "C1 cycle {} xi_worst {}",
                g.format_walk(&c.cycle),
                c.xi_worst
            );
        }
        for p in self.failing_pairs() {
            let _ = writeln!(
                s,
                "C2 walk {} with cycle {} joint_xi {}",
                g.format_walk(&p.simple_walk),
                g.format_walk(&p.cycle),
                p.joint_xi
            );
        }
        let _ = writeln!(s, "\n[warnings]");
        for w in &self.warnings {
            let _ = writeln!(s, "{w}");
        }
        s
    }
}
