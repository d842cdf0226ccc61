//! The vertex- and edge-weighted switching graph, walks over it and the
//! contractivity sums evaluated along walks.
//!
//! Vertices are subsystems. A vertex weight is `-|λ|` for an IOSS subsystem
//! and `+|λ|` for a non-IOSS one; an edge weight is `ln μ` for an admissible
//! switch. Vertices are addressed by their position in the graph (declaration
//! order); labels are kept for reporting.

use std::collections::HashMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Relative slack allowed when checking a dwell duration against `[δ, Δ]`.
/// Durations recovered from switching instants carry rounding error.
pub(crate) const DWELL_SLACK: f64 = 1e-9;

pub(crate) fn within_dwell(d: f64, lo: f64, hi: f64) -> bool {
    d >= lo - DWELL_SLACK * lo.max(1.0) && d <= hi + DWELL_SLACK * hi.max(1.0)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("vertex `{label}`: |lambda| must be positive and finite, got {value}")]
    BadLambda { label: String, value: f64 },
    #[error("vertex `{label}`: dwell bounds must satisfy 0 < delta <= Delta, got [{delta}, {big_delta}]")]
    BadDwellBounds {
        label: String,
        delta: f64,
        big_delta: f64,
    },
    #[error("duplicate vertex label `{0}`")]
    DuplicateLabel(String),
    #[error("edge {from} -> {to}: mu must be >= 1, got {mu}")]
    MuBelowOne { from: String, to: String, mu: f64 },
    #[error("edge {from} -> {to}: endpoint does not exist")]
    DanglingEdge { from: String, to: String },
    #[error("edge {0} -> {0}: self-loops are not admissible switches")]
    SelfLoop(String),
    #[error("duplicate edge {from} -> {to}")]
    DuplicateEdge { from: String, to: String },
    #[error("walk must contain at least one vertex")]
    EmptyWalk,
    #[error("walk position {position}: vertex index {vertex} is not in the graph")]
    UnknownVertex { position: usize, vertex: usize },
    #[error("walk position {position}: no edge {from} -> {to}")]
    MissingEdge {
        position: usize,
        from: String,
        to: String,
    },
    #[error("walk has {edges} edge(s) but {dwells} dwell duration(s) were given")]
    DwellLengthMismatch { edges: usize, dwells: usize },
    #[error("dwell {value} at position {position} outside [{lo}, {hi}] of vertex `{label}`")]
    DwellOutOfBounds {
        position: usize,
        label: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("walks cannot be joined: first ends at `{end}`, second starts at `{start}`")]
    EndpointMismatch { end: String, start: String },
    #[error("jointly contractive walks must be distinct")]
    NotDistinct,
    #[error("unknown vertex label `{0}`")]
    UnknownLabel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StabilityClass {
    /// Member of `P_S`.
    Ioss,
    /// Member of `P_U`.
    NonIoss,
}

/// Input description of one vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexSpec {
    pub label: String,
    pub class: StabilityClass,
    pub lambda_abs: f64,
    pub delta: f64,
    pub big_delta: f64,
}

impl VertexSpec {
    pub fn new(
        label: impl Into<String>,
        class: StabilityClass,
        lambda_abs: f64,
        delta: f64,
        big_delta: f64,
    ) -> Self {
        VertexSpec {
            label: label.into(),
            class,
            lambda_abs,
            delta,
            big_delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Vertex {
    pub label: String,
    pub class: StabilityClass,
    pub lambda_abs: f64,
    /// `-|λ|` for IOSS vertices, `+|λ|` otherwise.
    pub weight: f64,
    pub delta: f64,
    pub big_delta: f64,
}

impl Vertex {
    /// Signed rate `λ_p`: positive for IOSS vertices, negative otherwise.
    pub fn lambda(&self) -> f64 {
        -self.weight
    }

    /// Dwell duration that maximises `weight * D` over `[δ, Δ]`.
    pub fn worst_dwell(&self) -> f64 {
        match self.class {
            StabilityClass::Ioss => self.delta,
            StabilityClass::NonIoss => self.big_delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub mu: f64,
    /// `ln μ`, nonnegative.
    pub weight: f64,
}

/// The weighted switching graph. Immutable once built.
#[derive(Debug, Clone)]
pub struct StabilityGraph {
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    // outgoing edge ids per vertex, ordered by target index
    out: Vec<Vec<usize>>,
    lookup: HashMap<(usize, usize), usize>,
}

impl StabilityGraph {
    /// Builds the graph from vertex data and `(from, to, μ)` triples given by
    /// vertex index.
    pub fn new(
        vertices: Vec<VertexSpec>,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self, GraphError> {
        let mut seen = HashMap::new();
        let mut built = Vec::with_capacity(vertices.len());
        for (i, v) in vertices.into_iter().enumerate() {
            if !(v.lambda_abs.is_finite() && v.lambda_abs > 0.0) {
                return Err(GraphError::BadLambda {
                    label: v.label,
                    value: v.lambda_abs,
                });
            }
            if !(v.delta.is_finite()
                && v.big_delta.is_finite()
                && v.delta > 0.0
                && v.delta <= v.big_delta)
            {
                return Err(GraphError::BadDwellBounds {
                    label: v.label,
                    delta: v.delta,
                    big_delta: v.big_delta,
                });
            }
            if seen.insert(v.label.clone(), i).is_some() {
                return Err(GraphError::DuplicateLabel(v.label));
            }
            let weight = match v.class {
                StabilityClass::Ioss => -v.lambda_abs,
                StabilityClass::NonIoss => v.lambda_abs,
            };
            built.push(Vertex {
                label: v.label,
                class: v.class,
                lambda_abs: v.lambda_abs,
                weight,
                delta: v.delta,
                big_delta: v.big_delta,
            });
        }

        let n = built.len();
        let label = |i: usize| {
            built
                .get(i)
                .map(|v: &Vertex| v.label.clone())
                .unwrap_or_else(|| format!("#{i}"))
        };
        let mut out_edges = Vec::new();
        let mut lookup = HashMap::new();
        for (from, to, mu) in edges {
            if from >= n || to >= n {
                return Err(GraphError::DanglingEdge {
                    from: label(from),
                    to: label(to),
                });
            }
            if from == to {
                return Err(GraphError::SelfLoop(label(from)));
            }
            if !(mu.is_finite() && mu >= 1.0) {
                return Err(GraphError::MuBelowOne {
                    from: label(from),
                    to: label(to),
                    mu,
                });
            }
            if lookup.insert((from, to), out_edges.len()).is_some() {
                return Err(GraphError::DuplicateEdge {
                    from: label(from),
                    to: label(to),
                });
            }
            out_edges.push(Edge {
                from,
                to,
                mu,
                weight: mu.ln(),
            });
        }

        let mut out = vec![Vec::new(); n];
        for (id, e) in out_edges.iter().enumerate() {
            out[e.from].push(id);
        }
        for list in &mut out {
            list.sort_by_key(|&id| out_edges[id].to);
        }

        Ok(StabilityGraph {
            vertices: built,
            edges: out_edges,
            out,
            lookup,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn vertex(&self, v: usize) -> &Vertex {
        &self.vertices[v]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn index_of(&self, label: &str) -> Result<usize, GraphError> {
        self.vertices
            .iter()
            .position(|v| v.label == label)
            .ok_or_else(|| GraphError::UnknownLabel(label.to_string()))
    }

    pub fn label(&self, v: usize) -> &str {
        &self.vertices[v].label
    }

    pub fn edge(&self, from: usize, to: usize) -> Option<&Edge> {
        self.lookup.get(&(from, to)).map(|&id| &self.edges[id])
    }

    /// Successors of `v` in increasing index order.
    pub fn successors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.out[v].iter().map(|&id| self.edges[id].to)
    }

    pub fn out_degree(&self, v: usize) -> usize {
        self.out[v].len()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.lookup.contains_key(&(from, to))
    }

    pub fn vertex_weight(&self, v: usize) -> f64 {
        self.vertices[v].weight
    }

    /// `ln μ` of an edge known to exist.
    pub fn edge_weight(&self, from: usize, to: usize) -> f64 {
        self.edge(from, to)
            .unwrap_or_else(|| panic!("no edge {from} -> {to}"))
            .weight
    }

    pub fn check_walk(&self, walk: &Walk) -> Result<(), GraphError> {
        let n = self.vertex_count();
        for (position, &v) in walk.vertices().iter().enumerate() {
            if v >= n {
                return Err(GraphError::UnknownVertex {
                    position,
                    vertex: v,
                });
            }
        }
        for (position, (a, b)) in walk.steps().enumerate() {
            if !self.has_edge(a, b) {
                return Err(GraphError::MissingEdge {
                    position,
                    from: self.label(a).to_string(),
                    to: self.label(b).to_string(),
                });
            }
        }
        Ok(())
    }

    /// Walk from vertex labels.
    pub fn walk(&self, labels: &[&str]) -> Result<Walk, GraphError> {
        let vertices = labels
            .iter()
            .map(|l| self.index_of(l))
            .collect::<Result<Vec<_>, _>>()?;
        let walk = Walk::new(vertices)?;
        self.check_walk(&walk)?;
        Ok(walk)
    }

    pub fn format_walk(&self, walk: &Walk) -> String {
        walk.vertices()
            .iter()
            .map(|&v| self.label(v))
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Sum of edge weights along the walk.
    fn edge_sum(&self, walk: &Walk) -> f64 {
        walk.steps().map(|(a, b)| self.edge_weight(a, b)).sum()
    }

    /// The contractivity sum `Σ w(v_i) D_i + Σ w(v_i, v_{i+1})` at the given
    /// dwell durations.
    pub fn xi_of(&self, walk: &Walk, dwell: &DwellAssignment) -> Result<f64, GraphError> {
        self.check_walk(walk)?;
        if dwell.len() != walk.edge_count() {
            return Err(GraphError::DwellLengthMismatch {
                edges: walk.edge_count(),
                dwells: dwell.len(),
            });
        }
        let mut vertex_sum = 0.0;
        for (position, (&v, &d)) in walk.vertices().iter().zip(dwell.durations()).enumerate() {
            let vx = &self.vertices[v];
            if !within_dwell(d, vx.delta, vx.big_delta) {
                return Err(GraphError::DwellOutOfBounds {
                    position,
                    label: vx.label.clone(),
                    value: d,
                    lo: vx.delta,
                    hi: vx.big_delta,
                });
            }
            vertex_sum += vx.weight * d;
        }
        Ok(vertex_sum + self.edge_sum(walk))
    }

    /// The dwell assignment at which the contractivity sum is largest:
    /// `δ` on IOSS vertices, `Δ` on the others.
    pub fn worst_dwell(&self, walk: &Walk) -> DwellAssignment {
        DwellAssignment::new(
            walk.vertices()[..walk.edge_count()]
                .iter()
                .map(|&v| self.vertices[v].worst_dwell())
                .collect(),
        )
    }

    /// Supremum of [`xi_of`](Self::xi_of) over all admissible dwell
    /// assignments. The sum is affine in each duration, so the supremum sits at
    /// the box corner returned by [`worst_dwell`](Self::worst_dwell).
    pub fn xi_worst(&self, walk: &Walk) -> Result<f64, GraphError> {
        self.check_walk(walk)?;
        let vertex_sum: f64 = walk.vertices()[..walk.edge_count()]
            .iter()
            .map(|&v| {
                let vx = &self.vertices[v];
                vx.weight * vx.worst_dwell()
            })
            .sum();
        Ok(vertex_sum + self.edge_sum(walk))
    }

    pub fn is_contractive(&self, walk: &Walk, tolerance: f64) -> Result<Contractivity, GraphError> {
        let xi = self.xi_worst(walk)?;
        Ok(Contractivity::from_xi(xi, tolerance))
    }

    pub fn is_jointly_contractive(
        &self,
        first: &Walk,
        second: &Walk,
        tolerance: f64,
    ) -> Result<Contractivity, GraphError> {
        if first.last() != second.first() {
            return Err(GraphError::EndpointMismatch {
                end: self.label(first.last()).to_string(),
                start: self.label(second.first()).to_string(),
            });
        }
        if !first.is_distinct_from(second) {
            return Err(GraphError::NotDistinct);
        }
        let xi = self.xi_worst(first)? + self.xi_worst(second)?;
        Ok(Contractivity::from_xi(xi, tolerance))
    }
}

/// Verdict of a (joint) contractivity check. `margin = -xi`; the verdict is
/// `xi <= -tolerance`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Contractivity {
    pub verdict: bool,
    pub xi: f64,
    pub margin: f64,
}

impl Contractivity {
    pub fn from_xi(xi: f64, tolerance: f64) -> Self {
        Contractivity {
            verdict: xi <= -tolerance,
            xi,
            margin: -xi,
        }
    }
}

/// A finite vertex sequence. Edge membership is checked against a graph by
/// the operations that consume walks.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Walk(Vec<usize>);

impl Walk {
    pub fn new(vertices: Vec<usize>) -> Result<Self, GraphError> {
        if vertices.is_empty() {
            return Err(GraphError::EmptyWalk);
        }
        Ok(Walk(vertices))
    }

    pub fn vertices(&self) -> &[usize] {
        &self.0
    }

    /// Number of vertices counting repetitions.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.0.len() - 1
    }

    pub fn first(&self) -> usize {
        self.0[0]
    }

    pub fn last(&self) -> usize {
        *self.0.last().unwrap()
    }

    pub fn steps(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.0.windows(2).map(|w| (w[0], w[1]))
    }

    fn interior(&self) -> &[usize] {
        if self.0.len() < 2 {
            &[]
        } else {
            &self.0[1..self.0.len() - 1]
        }
    }

    /// Returns to its first vertex without visiting it in between.
    pub fn is_closed(&self) -> bool {
        self.0.len() >= 3 && self.first() == self.last() && !self.interior().contains(&self.first())
    }

    /// Endpoints differ and no vertex repeats.
    pub fn is_simple(&self) -> bool {
        self.0.len() >= 2 && self.first() != self.last() && all_distinct(&self.0)
    }

    /// Closed, with pairwise distinct interior vertices.
    pub fn is_cycle(&self) -> bool {
        self.is_closed() && all_distinct(&self.0[..self.0.len() - 1])
    }

    pub fn contains(&self, v: usize) -> bool {
        self.0.contains(&v)
    }

    /// Some vertex appears in exactly one of the two walks.
    pub fn is_distinct_from(&self, other: &Walk) -> bool {
        self.0.iter().any(|v| !other.contains(*v)) || other.0.iter().any(|v| !self.contains(*v))
    }

    /// Joins two walks sharing the endpoint `self.last() == other.first()`.
    pub fn concat(&self, other: &Walk) -> Result<Walk, GraphError> {
        if self.last() != other.first() {
            return Err(GraphError::EndpointMismatch {
                end: self.last().to_string(),
                start: other.first().to_string(),
            });
        }
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0[1..]);
        Ok(Walk(v))
    }

    /// Sub-walk over positions `from..=to`.
    pub fn slice(&self, from: usize, to: usize) -> Walk {
        Walk(self.0[from..=to].to_vec())
    }

    /// The same cycle read from position `k` of its vertex ring.
    pub fn rotate(&self, k: usize) -> Walk {
        debug_assert!(self.first() == self.last());
        let ring = &self.0[..self.0.len() - 1];
        let mut v: Vec<usize> = ring[k..].iter().chain(&ring[..k]).copied().collect();
        v.push(v[0]);
        Walk(v)
    }
}

impl fmt::Display for Walk {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

fn all_distinct(v: &[usize]) -> bool {
    v.iter().enumerate().all(|(i, a)| !v[i + 1..].contains(a))
}

/// One dwell duration per non-final walk position.
#[derive(Debug, Clone, PartialEq)]
pub struct DwellAssignment(Vec<f64>);

impl DwellAssignment {
    pub fn new(durations: Vec<f64>) -> Self {
        DwellAssignment(durations)
    }

    pub fn durations(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn concat(&self, other: &DwellAssignment) -> DwellAssignment {
        DwellAssignment(self.0.iter().chain(&other.0).copied().collect())
    }
}
