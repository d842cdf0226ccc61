//! Switching signals: piecewise-constant, right-continuous, truncated at a
//! horizon. Sampling, admissibility checks, switch statistics over windows
//! and a two-column text format for replay.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{within_dwell, DwellAssignment, StabilityGraph, Walk};

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("malformed signal: {0}")]
    Malformed(String),
    #[error("vertex `{vertex}` has no admissible successor but must switch before t = {time}")]
    DeadEnd { vertex: String, time: f64 },
    #[error("window ({s}, {t}] is not inside (0, {horizon}]")]
    BadWindow { s: f64, t: f64, horizon: f64 },
    #[error("unknown subsystem label `{0}`")]
    UnknownLabel(String),
    #[error("signal file: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingSignal {
    instants: Vec<f64>,
    indices: Vec<usize>,
    horizon: f64,
}

impl SwitchingSignal {
    /// Checks shape only: `τ0 = 0`, strictly increasing instants, one index
    /// per instant, last instant within the horizon.
    pub fn new(instants: Vec<f64>, indices: Vec<usize>, horizon: f64) -> Result<Self, SignalError> {
        let bad = |m: String| Err(SignalError::Malformed(m));
        if instants.is_empty() {
            return bad("no instants".into());
        }
        if instants.len() != indices.len() {
            return bad(format!(
                "{} instants but {} indices",
                instants.len(),
                indices.len()
            ));
        }
        if instants[0] != 0.0 {
            return bad(format!("first instant must be 0, got {}", instants[0]));
        }
        if let Some(i) = (1..instants.len()).find(|&i| {
            instants[i].partial_cmp(&instants[i - 1]) != Some(std::cmp::Ordering::Greater)
        }) {
            return bad(format!(
                "instants not strictly increasing at index {i}: {} then {}",
                instants[i - 1],
                instants[i]
            ));
        }
        if !(horizon.is_finite() && horizon > 0.0 && horizon >= *instants.last().unwrap()) {
            return bad(format!(
                "horizon {horizon} must be positive and cover every instant"
            ));
        }
        Ok(SwitchingSignal {
            instants,
            indices,
            horizon,
        })
    }

    pub fn instants(&self) -> &[f64] {
        &self.instants
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn switch_count(&self) -> usize {
        self.instants.len() - 1
    }

    /// Number of switches in `(0, t]`.
    pub fn switches_until(&self, t: f64) -> usize {
        self.instants.partition_point(|&x| x <= t) - 1
    }

    /// Position `i` of the interval `[τ_i, τ_{i+1})` containing `t`.
    pub fn interval_at(&self, t: f64) -> usize {
        self.switches_until(t.max(0.0))
    }

    /// `σ(t)`, right-continuous.
    pub fn active_at(&self, t: f64) -> usize {
        self.indices[self.interval_at(t)]
    }

    /// End of interval `i`: the next instant, or the horizon for the last one.
    pub fn interval_end(&self, i: usize) -> f64 {
        self.instants.get(i + 1).copied().unwrap_or(self.horizon)
    }

    /// Visited vertices in order.
    pub fn walk(&self) -> Walk {
        Walk::new(self.indices.clone()).expect("signal has at least one instant")
    }

    /// Dwell durations of the completed intervals.
    pub fn dwells(&self) -> DwellAssignment {
        DwellAssignment::new(self.instants.windows(2).map(|w| w[1] - w[0]).collect())
    }

    /// Contractivity sum of the stretch between instants `a` and `b`
    /// (`a <= b`), i.e. over the window `(τ_a, τ_b]`.
    pub fn xi_between(&self, graph: &StabilityGraph, a: usize, b: usize) -> f64 {
        let mut xi = 0.0;
        for i in a..b {
            let (p, q) = (self.indices[i], self.indices[i + 1]);
            xi += graph.vertex_weight(p) * (self.instants[i + 1] - self.instants[i])
                + graph.edge_weight(p, q);
        }
        xi
    }

    /// Signal restricted to `[τ_a, τ_b]`, shifted to start at zero.
    pub fn slice(&self, a: usize, b: usize) -> SwitchingSignal {
        let t0 = self.instants[a];
        SwitchingSignal {
            instants: self.instants[a..=b].iter().map(|t| t - t0).collect(),
            indices: self.indices[a..=b].to_vec(),
            horizon: self.instants[b] - t0,
        }
    }
}

/// Random admissible signal: successor uniform over out-neighbours, dwell
/// uniform over `[δ, Δ]`. Stops at the last switch before the horizon.
pub fn sample_signal(
    graph: &StabilityGraph,
    start: usize,
    horizon: f64,
    seed: u64,
) -> Result<SwitchingSignal, SignalError> {
    if start >= graph.vertex_count() {
        return Err(SignalError::Malformed(format!(
            "start vertex {start} out of range"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instants = vec![0.0];
    let mut indices = vec![start];
    let mut t = 0.0;
    let mut v = start;
    loop {
        let vx = graph.vertex(v);
        let dwell = if vx.delta < vx.big_delta {
            rng.random_range(vx.delta..=vx.big_delta)
        } else {
            vx.delta
        };
        let next_t = t + dwell;
        if next_t > horizon {
            break;
        }
        let succ: Vec<usize> = graph.successors(v).collect();
        if succ.is_empty() {
            if vx.big_delta < horizon - t {
                return Err(SignalError::DeadEnd {
                    vertex: vx.label.clone(),
                    time: t + vx.big_delta,
                });
            }
            break;
        }
        v = succ[rng.random_range(0..succ.len())];
        t = next_t;
        instants.push(t);
        indices.push(v);
    }
    SwitchingSignal::new(instants, indices, horizon)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SignalViolation {
    UnknownVertex {
        index: usize,
        vertex: usize,
    },
    MissingEdge {
        index: usize,
        from: String,
        to: String,
    },
    DwellBelow {
        index: usize,
        dwell: f64,
        delta: f64,
    },
    DwellAbove {
        index: usize,
        dwell: f64,
        big_delta: f64,
    },
    /// The last interval already exceeds `Δ` before the horizon.
    OverdueSwitch {
        index: usize,
        dwell: f64,
        big_delta: f64,
    },
}

impl fmt::Display for SignalViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SignalViolation::UnknownVertex { index, vertex } => {
                write!(f, "unknown subsystem {vertex} at index {index}")
            }
            SignalViolation::MissingEdge { index, from, to } => {
                write!(f, "switch {from} -> {to} not admissible at index {index}")
            }
            SignalViolation::DwellBelow {
                index,
                dwell,
                delta,
            } => {
                write!(f, "dwell below δ={delta} at index {index} (dwell {dwell})")
            }
            SignalViolation::DwellAbove {
                index,
                dwell,
                big_delta,
            } => write!(
                f,
                "dwell above Δ={big_delta} at index {index} (dwell {dwell})"
            ),
            SignalViolation::OverdueSwitch {
                index,
                dwell,
                big_delta,
            } => write!(
                f,
                "final interval at index {index} lasts {dwell}, past Δ={big_delta}"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalReport {
    pub ok: bool,
    pub violations: Vec<SignalViolation>,
}

pub fn validate_signal(graph: &StabilityGraph, signal: &SwitchingSignal) -> SignalReport {
    let n = graph.vertex_count();
    let mut violations = Vec::new();
    for (i, &v) in signal.indices.iter().enumerate() {
        if v >= n {
            violations.push(SignalViolation::UnknownVertex {
                index: i,
                vertex: v,
            });
        }
    }
    if violations.is_empty() {
        let last = signal.indices.len() - 1;
        for i in 0..=last {
            let vx = graph.vertex(signal.indices[i]);
            let dwell = signal.interval_end(i) - signal.instants[i];
            if i < last {
                let (p, q) = (signal.indices[i], signal.indices[i + 1]);
                if !graph.has_edge(p, q) {
                    violations.push(SignalViolation::MissingEdge {
                        index: i,
                        from: graph.label(p).to_string(),
                        to: graph.label(q).to_string(),
                    });
                }
                if !within_dwell(dwell, vx.delta, f64::INFINITY) {
                    violations.push(SignalViolation::DwellBelow {
                        index: i,
                        dwell,
                        delta: vx.delta,
                    });
                } else if !within_dwell(dwell, vx.delta, vx.big_delta) {
                    violations.push(SignalViolation::DwellAbove {
                        index: i,
                        dwell,
                        big_delta: vx.big_delta,
                    });
                }
            } else if !within_dwell(dwell, 0.0, vx.big_delta) {
                violations.push(SignalViolation::OverdueSwitch {
                    index: i,
                    dwell,
                    big_delta: vx.big_delta,
                });
            }
        }
    }
    SignalReport {
        ok: violations.is_empty(),
        violations,
    }
}

/// Switch counts and activation times over a window `(s, t]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SwitchStats {
    pub switches: usize,
    pub activation: BTreeMap<usize, f64>,
    pub switch_counts: BTreeMap<(usize, usize), usize>,
}

impl SwitchStats {
    /// `Σ_p w(p) T_p + Σ_(p,q) w(p,q) N_pq`.
    pub fn aggregate_xi(&self, graph: &StabilityGraph) -> f64 {
        let vertices: f64 = self
            .activation
            .iter()
            .map(|(&p, &tp)| graph.vertex_weight(p) * tp)
            .sum();
        let edges: f64 = self
            .switch_counts
            .iter()
            .map(|(&(p, q), &n)| graph.edge_weight(p, q) * n as f64)
            .sum();
        vertices + edges
    }
}

pub fn stats(signal: &SwitchingSignal, s: f64, t: f64) -> Result<SwitchStats, SignalError> {
    if !(0.0 <= s && s < t && t <= signal.horizon) {
        return Err(SignalError::BadWindow {
            s,
            t,
            horizon: signal.horizon,
        });
    }
    let mut out = SwitchStats::default();
    for i in 0..signal.indices.len() {
        let lo = signal.instants[i].max(s);
        let hi = signal.interval_end(i).min(t);
        if hi > lo {
            *out.activation.entry(signal.indices[i]).or_insert(0.0) += hi - lo;
        }
        if i > 0 && s < signal.instants[i] && signal.instants[i] <= t {
            out.switches += 1;
            *out.switch_counts
                .entry((signal.indices[i - 1], signal.indices[i]))
                .or_insert(0) += 1;
        }
    }
    Ok(out)
}

/// Writes `# horizon T` followed by `instant,index` rows (index as label).
pub fn write_signal(
    mut w: impl Write,
    graph: &StabilityGraph,
    signal: &SwitchingSignal,
) -> Result<(), SignalError> {
    writeln!(w, "# horizon {}", signal.horizon)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["instant", "index"])?;
    for (t, &v) in signal.instants.iter().zip(&signal.indices) {
        out.write_record([t.to_string(), graph.label(v).to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_signal(
    mut r: impl Read,
    graph: &StabilityGraph,
) -> Result<SwitchingSignal, SignalError> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let (first, rest) = text.split_once('\n').unwrap_or((text.as_str(), ""));
    let horizon: f64 = first
        .trim()
        .strip_prefix("# horizon")
        .and_then(|h| h.trim().parse().ok())
        .ok_or_else(|| {
            SignalError::Format(format!("expected `# horizon T`, got `{}`", first.trim()))
        })?;
    let mut instants = Vec::new();
    let mut indices = Vec::new();
    let mut rows = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(rest.as_bytes());
    for row in rows.records() {
        let row = row?;
        if row.len() != 2 {
            return Err(SignalError::Format(format!(
                "expected 2 columns, got {}",
                row.len()
            )));
        }
        let t: f64 = row[0]
            .parse()
            .map_err(|_| SignalError::Format(format!("bad instant `{}`", &row[0])))?;
        let v = graph
            .index_of(&row[1])
            .map_err(|_| SignalError::UnknownLabel(row[1].to_string()))?;
        instants.push(t);
        indices.push(v);
    }
    SwitchingSignal::new(instants, indices, horizon)
}
