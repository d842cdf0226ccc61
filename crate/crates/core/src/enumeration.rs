//! Enumeration of rooted elementary cycles and simple walks, plus the two
//! walk decompositions used to argue contractivity of long walks: a closed walk
//! splits into cycles, and any walk splits greedily into contractive blocks
//! followed by a short residual.

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use thiserror::Error;

use crate::graph::{Contractivity, DwellAssignment, GraphError, StabilityGraph, Walk};

pub const DEFAULT_CYCLE_CAP: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnumerationError {
    #[error("more than {cap} cycles or walks; raise the cap to enumerate exhaustively")]
    CapacityExceeded { cap: usize },
    #[error("walk {0} does not return to its first vertex")]
    NotClosed(String),
    #[error("walk {0} repeats a vertex on consecutive positions")]
    Stutter(String),
    #[error("segment {walk} is not contractive (worst-case sum {xi}); the graph does not satisfy the certificate conditions")]
    NotContractive { walk: String, xi: f64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Elementary cycles grouped by root vertex. A cycle through `k` vertices is
/// listed `k` times, once read from each of its vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleSet {
    rooted: Vec<Vec<Walk>>,
    distinct: Vec<Walk>,
}

impl CycleSet {
    /// Cycles rooted at `v`, lexicographically ordered.
    pub fn rooted_at(&self, v: usize) -> &[Walk] {
        &self.rooted[v]
    }

    /// Each cycle once, read from its smallest vertex, lexicographically ordered.
    pub fn distinct(&self) -> &[Walk] {
        &self.distinct
    }

    pub fn distinct_count(&self) -> usize {
        self.distinct.len()
    }

    pub fn rooted_count(&self) -> usize {
        self.rooted.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.distinct.is_empty()
    }

    /// `(root, cycle)` pairs in root order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &Walk)> {
        self.rooted
            .iter()
            .enumerate()
            .flat_map(|(v, list)| list.iter().map(move |c| (v, c)))
    }
}

/// All elementary cycles of the graph (Johnson's circuit search, one start
/// vertex at a time over the strongly connected pieces of the remaining
/// subgraph).
pub fn enumerate_cycles(graph: &StabilityGraph, cap: usize) -> Result<CycleSet, EnumerationError> {
    let n = graph.vertex_count();
    let mut distinct = Vec::new();

    for start in 0..n {
        let Some(component) = component_of(graph, start) else {
            continue;
        };
        let mut search = CircuitSearch {
            graph,
            start,
            in_component: component,
            blocked: vec![false; n],
            blocked_by: vec![Vec::new(); n],
            stack: Vec::new(),
            found: &mut distinct,
            cap,
        };
        search.circuit(start)?;
    }

    let mut rooted = vec![Vec::new(); n];
    for cycle in &distinct {
        for k in 0..cycle.edge_count() {
            let rotated = cycle.rotate(k);
            rooted[rotated.first()].push(rotated);
        }
    }
    for list in &mut rooted {
        list.sort();
    }
    distinct.sort();
    Ok(CycleSet { rooted, distinct })
}

/// Membership mask of the strongly connected component containing `start` in
/// the subgraph induced by vertices `>= start`, if that component has a cycle.
fn component_of(graph: &StabilityGraph, start: usize) -> Option<Vec<bool>> {
    let n = graph.vertex_count();
    let mut sub = DiGraph::<usize, ()>::new();
    let nodes: Vec<NodeIndex> = (start..n).map(|v| sub.add_node(v)).collect();
    for v in start..n {
        for w in graph.successors(v).filter(|&w| w >= start) {
            sub.add_edge(nodes[v - start], nodes[w - start], ());
        }
    }
    let scc = tarjan_scc(&sub)
        .into_iter()
        .find(|c| c.contains(&nodes[0]))?;
    if scc.len() < 2 {
        return None;
    }
    let mut mask = vec![false; n];
    for node in scc {
        mask[sub[node]] = true;
    }
    Some(mask)
}

struct CircuitSearch<'a> {
    graph: &'a StabilityGraph,
    start: usize,
    in_component: Vec<bool>,
    blocked: Vec<bool>,
    blocked_by: Vec<Vec<usize>>,
    stack: Vec<usize>,
    found: &'a mut Vec<Walk>,
    cap: usize,
}

impl CircuitSearch<'_> {
    fn circuit(&mut self, v: usize) -> Result<bool, EnumerationError> {
        let mut closed = false;
        self.stack.push(v);
        self.blocked[v] = true;
        let next: Vec<usize> = self
            .graph
            .successors(v)
            .filter(|&w| self.in_component[w])
            .collect();
        for &w in &next {
            if w == self.start {
                if self.found.len() >= self.cap {
                    return Err(EnumerationError::CapacityExceeded { cap: self.cap });
                }
                let mut cycle = self.stack.clone();
                cycle.push(self.start);
                self.found.push(Walk::new(cycle)?);
                closed = true;
            } else if !self.blocked[w] && self.circuit(w)? {
                closed = true;
            }
        }
        if closed {
            self.unblock(v);
        } else {
            for &w in &next {
                if !self.blocked_by[w].contains(&v) {
                    self.blocked_by[w].push(v);
                }
            }
        }
        self.stack.pop();
        Ok(closed)
    }

    fn unblock(&mut self, u: usize) {
        self.blocked[u] = false;
        let waiting = std::mem::take(&mut self.blocked_by[u]);
        for w in waiting {
            if self.blocked[w] {
                self.unblock(w);
            }
        }
    }
}

/// Every walk from `u` to `v` whose vertices are pairwise distinct, in
/// lexicographic order. Empty when `u == v` or `v` is unreachable.
pub fn enumerate_simple_walks(graph: &StabilityGraph, u: usize, v: usize) -> Vec<Walk> {
    simple_walks_capped(graph, u, v, usize::MAX).expect("uncapped enumeration")
}

pub fn simple_walks_capped(
    graph: &StabilityGraph,
    u: usize,
    v: usize,
    cap: usize,
) -> Result<Vec<Walk>, EnumerationError> {
    let mut out = Vec::new();
    if u == v {
        return Ok(out);
    }
    let mut on_path = vec![false; graph.vertex_count()];
    let mut path = vec![u];
    on_path[u] = true;
    extend_simple(graph, v, &mut path, &mut on_path, &mut out, cap)?;
    Ok(out)
}

fn extend_simple(
    graph: &StabilityGraph,
    target: usize,
    path: &mut Vec<usize>,
    on_path: &mut [bool],
    out: &mut Vec<Walk>,
    cap: usize,
) -> Result<(), EnumerationError> {
    let tail = *path.last().unwrap();
    for w in graph.successors(tail) {
        if on_path[w] {
            continue;
        }
        path.push(w);
        if w == target {
            if out.len() >= cap {
                return Err(EnumerationError::CapacityExceeded { cap });
            }
            out.push(Walk::new(path.clone())?);
        } else {
            on_path[w] = true;
            extend_simple(graph, target, path, on_path, out, cap)?;
            on_path[w] = false;
        }
        path.pop();
    }
    Ok(())
}

/// Splits a walk that returns to its first vertex into elementary cycles.
///
/// Vertices are pushed on a stack; when a vertex already on the stack comes
/// round again, the stretch above its earlier occurrence is cut out as a
/// cycle. Nested loops are therefore emitted innermost first, and the edge
/// multiset of the output equals that of the input.
pub fn decompose_closed_walk(walk: &Walk) -> Result<Vec<Walk>, EnumerationError> {
    if walk.len() < 3 || walk.first() != walk.last() {
        return Err(EnumerationError::NotClosed(walk.to_string()));
    }
    if walk.steps().any(|(a, b)| a == b) {
        return Err(EnumerationError::Stutter(walk.to_string()));
    }
    let mut stack = vec![walk.first()];
    let mut cycles = Vec::new();
    for &v in &walk.vertices()[1..] {
        match stack.iter().position(|&s| s == v) {
            Some(pos) => {
                let mut cycle = stack[pos..].to_vec();
                cycle.push(v);
                cycles.push(Walk::new(cycle)?);
                stack.truncate(pos + 1);
            }
            None => stack.push(v),
        }
    }
    debug_assert_eq!(stack, vec![walk.first()]);
    Ok(cycles)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub walk: Walk,
    /// Contractivity sum at the dwell durations actually taken.
    pub xi: f64,
    pub worst: Contractivity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrefixDecomposition {
    pub segments: Vec<Segment>,
    /// Tail after the last complete segment, `None` if nothing is left.
    pub residual: Option<Walk>,
    /// Walk position where the residual starts.
    pub residual_start: usize,
}

/// Greedy split of a finite walk into contractive blocks.
///
/// Starting from the current position, a block ends at the first vertex that
/// repeats inside it. Such a block is either a cycle, or a simple walk into a
/// cycle from a vertex outside that cycle; on a graph meeting both certificate
/// conditions each block is contractive. The residual has no repeated vertex.
pub fn decompose_prefix(
    graph: &StabilityGraph,
    walk: &Walk,
    dwell: &DwellAssignment,
    tolerance: f64,
) -> Result<PrefixDecomposition, EnumerationError> {
    graph.check_walk(walk)?;
    if dwell.len() != walk.edge_count() {
        return Err(GraphError::DwellLengthMismatch {
            edges: walk.edge_count(),
            dwells: dwell.len(),
        }
        .into());
    }
    let v = walk.vertices();
    let mut segments = Vec::new();
    let mut start = 0;
    let mut seen = vec![false; graph.vertex_count()];
    seen[v[0]] = true;
    for end in 1..v.len() {
        if !seen[v[end]] {
            seen[v[end]] = true;
            continue;
        }
        let block = walk.slice(start, end);
        let block_dwell = DwellAssignment::new(dwell.durations()[start..end].to_vec());
        let worst = graph.is_contractive(&block, tolerance)?;
        if !worst.verdict {
            return Err(EnumerationError::NotContractive {
                walk: graph.format_walk(&block),
                xi: worst.xi,
            });
        }
        let xi = graph.xi_of(&block, &block_dwell)?;
        segments.push(Segment {
            walk: block,
            xi,
            worst,
        });
        start = end;
        seen.iter_mut().for_each(|s| *s = false);
        seen[v[end]] = true;
    }
    let residual = (start + 1 < v.len()).then(|| walk.slice(start, v.len() - 1));
    Ok(PrefixDecomposition {
        segments,
        residual,
        residual_start: start,
    })
}
