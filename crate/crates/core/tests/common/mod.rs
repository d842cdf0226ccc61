//! Shared generators and brute-force oracles for the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use ioss_core::graph::{StabilityClass, StabilityGraph, VertexSpec, Walk};
use ioss_core::system::SystemSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn example_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/sec5.json")
}

pub fn example_json() -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(example_path()).unwrap()).unwrap()
}

pub fn example_spec() -> SystemSpec {
    SystemSpec::from_value(example_json()).unwrap()
}

/// Random digraph on 2..=max_vertices vertices. Vertex weights uniform in
/// [-5, 5), class by sign; dwell bounds delta in [0.1, 2), Delta up to 2 more;
/// each ordered pair is an edge with a per-graph probability; ln mu in [0, 1.5).
pub fn random_graph(rng: &mut ChaCha8Rng, max_vertices: usize) -> StabilityGraph {
    let n = rng.random_range(2..=max_vertices);
    let vertices = (0..n)
        .map(|i| {
            let w: f64 = rng.random_range(-5.0..5.0);
            let class = if w < 0.0 {
                StabilityClass::Ioss
            } else {
                StabilityClass::NonIoss
            };
            let delta = rng.random_range(0.1..2.0);
            let big_delta = delta + rng.random_range(0.0..2.0);
            VertexSpec::new(format!("v{i}"), class, w.abs().max(1e-3), delta, big_delta)
        })
        .collect();
    let p = rng.random_range(0.2..0.8);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if a != b && rng.random_bool(p) {
                edges.push((a, b, rng.random_range(0.0f64..1.5).exp()));
            }
        }
    }
    StabilityGraph::new(vertices, edges).unwrap()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random walk with at least one edge, or `None` from a sink.
pub fn random_walk(g: &StabilityGraph, rng: &mut ChaCha8Rng, max_len: usize) -> Option<Walk> {
    let mut v = vec![rng.random_range(0..g.vertex_count())];
    let len = rng.random_range(2..=max_len);
    while v.len() < len {
        let succ: Vec<usize> = g.successors(*v.last().unwrap()).collect();
        if succ.is_empty() {
            break;
        }
        v.push(succ[rng.random_range(0..succ.len())]);
    }
    (v.len() >= 2).then(|| Walk::new(v).unwrap())
}

/// Worst-case sum computed directly from the definition.
pub fn xi_worst_direct(g: &StabilityGraph, vs: &[usize]) -> f64 {
    let mut s = 0.0;
    for i in 0..vs.len() - 1 {
        let v = g.vertex(vs[i]);
        let d = if v.weight < 0.0 { v.delta } else { v.big_delta };
        s += v.weight * d + g.edge(vs[i], vs[i + 1]).unwrap().mu.ln();
    }
    s
}

/// Every elementary cycle, each once, read from its smallest vertex: plain
/// DFS from every root restricted to larger vertices.
pub fn naive_cycles(g: &StabilityGraph) -> Vec<Vec<usize>> {
    fn dfs(g: &StabilityGraph, root: usize, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        for w in g.successors(*path.last().unwrap()) {
            if w == root {
                let mut c = path.clone();
                c.push(root);
                out.push(c);
            } else if w > root && !path.contains(&w) {
                path.push(w);
                dfs(g, root, path, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    for r in 0..g.vertex_count() {
        dfs(g, r, &mut vec![r], &mut out);
    }
    out.sort();
    out
}
