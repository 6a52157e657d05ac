//! Fixtures and oracles for the exploration tests.

use std::collections::{BTreeSet, VecDeque};

use pmbugs::explorer::{GraphNode, GraphSpec, WorkloadGraph};
use pmbugs::levelhash::KnobKind;
use pmbugs::trace::{parse_trace_str, write_trace_string};
use pmbugs::{check_trace, Trace};

/// (alpha, gamma, q, r, max_next, expected), expected computed with exact
/// rational arithmetic.
pub const BELLMAN: [(f64, f64, f64, f64, f64, f64); 64] = [
    (0.1, 0.0, 0.0, 1.0, 2.0, 0.1),
    (0.1, 0.0, 5.0, -3.0, 10.0, 4.2),
    (0.1, 0.0, -2.5, 4.0, 0.75, -1.85),
    (0.1, 0.0, 100.0, 0.125, -8.0, 90.0125),
    (0.1, 0.5, 0.0, 1.0, 2.0, 0.2),
    (0.1, 0.5, 5.0, -3.0, 10.0, 4.7),
    (0.1, 0.5, -2.5, 4.0, 0.75, -1.8125),
    (0.1, 0.5, 100.0, 0.125, -8.0, 89.6125),
    (0.1, 0.9, 0.0, 1.0, 2.0, 0.28),
    (0.1, 0.9, 5.0, -3.0, 10.0, 5.1),
    (0.1, 0.9, -2.5, 4.0, 0.75, -1.7825),
    (0.1, 0.9, 100.0, 0.125, -8.0, 89.2925),
    (0.1, 0.99, 0.0, 1.0, 2.0, 0.298),
    (0.1, 0.99, 5.0, -3.0, 10.0, 5.19),
    (0.1, 0.99, -2.5, 4.0, 0.75, -1.77575),
    (0.1, 0.99, 100.0, 0.125, -8.0, 89.2205),
    (0.25, 0.0, 0.0, 1.0, 2.0, 0.25),
    (0.25, 0.0, 5.0, -3.0, 10.0, 3.0),
    (0.25, 0.0, -2.5, 4.0, 0.75, -0.875),
    (0.25, 0.0, 100.0, 0.125, -8.0, 75.03125),
    (0.25, 0.5, 0.0, 1.0, 2.0, 0.5),
    (0.25, 0.5, 5.0, -3.0, 10.0, 4.25),
    (0.25, 0.5, -2.5, 4.0, 0.75, -0.78125),
    (0.25, 0.5, 100.0, 0.125, -8.0, 74.03125),
    (0.25, 0.9, 0.0, 1.0, 2.0, 0.7),
    (0.25, 0.9, 5.0, -3.0, 10.0, 5.25),
    (0.25, 0.9, -2.5, 4.0, 0.75, -0.70625),
    (0.25, 0.9, 100.0, 0.125, -8.0, 73.23125),
    (0.25, 0.99, 0.0, 1.0, 2.0, 0.745),
    (0.25, 0.99, 5.0, -3.0, 10.0, 5.475),
    (0.25, 0.99, -2.5, 4.0, 0.75, -0.689375),
    (0.25, 0.99, 100.0, 0.125, -8.0, 73.05125),
    (0.5, 0.0, 0.0, 1.0, 2.0, 0.5),
    (0.5, 0.0, 5.0, -3.0, 10.0, 1.0),
    (0.5, 0.0, -2.5, 4.0, 0.75, 0.75),
    (0.5, 0.0, 100.0, 0.125, -8.0, 50.0625),
    (0.5, 0.5, 0.0, 1.0, 2.0, 1.0),
    (0.5, 0.5, 5.0, -3.0, 10.0, 3.5),
    (0.5, 0.5, -2.5, 4.0, 0.75, 0.9375),
    (0.5, 0.5, 100.0, 0.125, -8.0, 48.0625),
    (0.5, 0.9, 0.0, 1.0, 2.0, 1.4),
    (0.5, 0.9, 5.0, -3.0, 10.0, 5.5),
    (0.5, 0.9, -2.5, 4.0, 0.75, 1.0875),
    (0.5, 0.9, 100.0, 0.125, -8.0, 46.4625),
    (0.5, 0.99, 0.0, 1.0, 2.0, 1.49),
    (0.5, 0.99, 5.0, -3.0, 10.0, 5.95),
    (0.5, 0.99, -2.5, 4.0, 0.75, 1.12125),
    (0.5, 0.99, 100.0, 0.125, -8.0, 46.1025),
    (1.0, 0.0, 0.0, 1.0, 2.0, 1.0),
    (1.0, 0.0, 5.0, -3.0, 10.0, -3.0),
    (1.0, 0.0, -2.5, 4.0, 0.75, 4.0),
    (1.0, 0.0, 100.0, 0.125, -8.0, 0.125),
    (1.0, 0.5, 0.0, 1.0, 2.0, 2.0),
    (1.0, 0.5, 5.0, -3.0, 10.0, 2.0),
    (1.0, 0.5, -2.5, 4.0, 0.75, 4.375),
    (1.0, 0.5, 100.0, 0.125, -8.0, -3.875),
    (1.0, 0.9, 0.0, 1.0, 2.0, 2.8),
    (1.0, 0.9, 5.0, -3.0, 10.0, 6.0),
    (1.0, 0.9, -2.5, 4.0, 0.75, 4.675),
    (1.0, 0.9, 100.0, 0.125, -8.0, -7.075),
    (1.0, 0.99, 0.0, 1.0, 2.0, 2.98),
    (1.0, 0.99, 5.0, -3.0, 10.0, 6.9),
    (1.0, 0.99, -2.5, 4.0, 0.75, 4.7425),
    (1.0, 0.99, 100.0, 0.125, -8.0, -7.795),
];

pub fn criterion8_spec() -> GraphSpec {
    GraphSpec {
        seed: 8,
        branching: 4,
        depth: 3,
        ops_per_edge: 4,
        initial_exp: 2,
        bugs: vec![
            KnobKind::MissingFenceTokenValue,
            KnobKind::ClwbArbitraryRange,
            KnobKind::ExtraFenceLoop,
            KnobKind::MissingFenceTokenValue,
        ],
    }
}

/// Bug sites over the whole tree: `check_trace` on every root-to-node
/// prefix, visited breadth-first.
pub fn bfs_bug_sites(spec: &GraphSpec) -> BTreeSet<String> {
    let graph = WorkloadGraph::new(spec).unwrap();
    let mut queue: VecDeque<(GraphNode, Vec<pmbugs::TraceEvent>)> = VecDeque::new();
    let root = graph.root().unwrap();
    let events = root.state.emitted_events.clone();
    queue.push_back((root, events));
    let mut sites = BTreeSet::new();
    let mut visited = 0;
    while let Some((node, path)) = queue.pop_front() {
        visited += 1;
        let text = write_trace_string(&Trace {
            events: path.clone(),
            ..Trace::default()
        });
        let prefix = parse_trace_str(&text).unwrap();
        for r in check_trace(&prefix).reports {
            sites.insert(format!("{} {}", r.bug_class.label(), r.site));
        }
        for child in graph.children(&node).unwrap() {
            let mut p = path.clone();
            p.extend(child.state.emitted_events.iter().cloned());
            queue.push_back((child, p));
        }
    }
    assert_eq!(visited as u64, spec.state_count());
    sites
}
