//! Branching workload graphs.
//!
//! A graph is a complete tree: node ids are breadth-first ordinals and the
//! children of node `n` are `n*b + 1 ..= n*b + b`. Every node's incoming edge
//! runs a few level hashing ops on a copy of its parent's table; the root
//! edge also initializes the table. What an edge does depends only on the
//! graph seed and the node id, so any expansion order sees the same tree.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ExploreError;
use crate::levelhash::{BugKnob, KnobKind, LevelTable, OpGenerator, TableConfig};
use crate::oracles::ReportSet;
use crate::pm_state::MachineState;
use crate::trace::TraceEvent;

pub const MAX_BRANCHING: u32 = 4;
pub const MAX_STATES: u64 = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub seed: u64,
    pub branching: u32,
    pub depth: u32,
    #[serde(default = "default_ops_per_edge")]
    pub ops_per_edge: usize,
    #[serde(default = "default_initial_exp")]
    pub initial_exp: u32,
    /// One seeded edge per entry. Entry `j` fires at site variant `j + 1`.
    #[serde(default)]
    pub bugs: Vec<KnobKind>,
}

fn default_ops_per_edge() -> usize {
    4
}

fn default_initial_exp() -> u32 {
    2
}

impl GraphSpec {
    pub fn from_json(text: &str) -> Result<Self, ExploreError> {
        let spec: Self =
            serde_json::from_str(text).map_err(|e| ExploreError::Graph(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn state_count(&self) -> u64 {
        let b = u64::from(self.branching);
        let mut total = 0u64;
        let mut level = 1u64;
        for _ in 0..=self.depth {
            total = total.saturating_add(level);
            level = level.saturating_mul(b);
        }
        total
    }

    pub fn validate(&self) -> Result<(), ExploreError> {
        let bad = |msg: String| Err(ExploreError::Graph(msg));
        if !(1..=MAX_BRANCHING).contains(&self.branching) {
            return bad(format!("branching must be in 1..={MAX_BRANCHING}"));
        }
        if self.state_count() > MAX_STATES {
            return bad(format!("tree exceeds {MAX_STATES} states"));
        }
        if self.ops_per_edge == 0 {
            return bad("ops_per_edge must be at least 1".into());
        }
        if self.initial_exp > 16 {
            return bad("initial_exp must be at most 16".into());
        }
        for &k in &self.bugs {
            if matches!(k, KnobKind::None | KnobKind::DuplicateOnMove) {
                return bad(format!("knob {k} cannot seed a graph edge"));
            }
        }
        if self.bugs.len() as u64 >= self.state_count() {
            return bad("more bugs than non-root edges".into());
        }
        Ok(())
    }

    pub fn depth_of(&self, id: usize) -> u32 {
        let b = self.branching as usize;
        let (mut depth, mut first, mut width) = (0, 0usize, 1usize);
        while id >= first + width {
            first += width;
            width *= b;
            depth += 1;
        }
        depth
    }

    /// Non-root node ids carrying each seeded bug, in `bugs` order.
    pub fn bug_edges(&self) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0xb0b5_eed5);
        let candidates = (self.state_count() - 1) as usize;
        rand::seq::index::sample(&mut rng, candidates, self.bugs.len())
            .into_iter()
            .map(|i| i + 1)
            .collect()
    }
}

/// Observable facts about one tree node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExplorationState {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: u32,
    /// Events of the incoming edge.
    pub emitted_events: Vec<TraceEvent>,
    /// Persistent lines dirty or flush-pending after the edge.
    pub pm_pending: usize,
    /// PM instruction sites on the edge not seen earlier on the path.
    pub new_sites: usize,
    pub terminal: bool,
}

impl AsRef<ExplorationState> for ExplorationState {
    fn as_ref(&self) -> &ExplorationState {
        self
    }
}

/// A materialized node: its state plus everything needed to expand it.
#[derive(Debug, Clone)]
pub struct GraphNode {
    pub state: ExplorationState,
    /// Bugs visible at this node, as `"<class> <site>"`: signals raised on
    /// the edge plus stores still not durable after it.
    pub bug_sites: BTreeSet<String>,
    /// PM instruction sites executed on the edge.
    pub edge_sites: BTreeSet<String>,
    table: LevelTable,
    ops: OpGenerator,
    machine: MachineState,
    path_sites: BTreeSet<String>,
}

impl AsRef<ExplorationState> for GraphNode {
    fn as_ref(&self) -> &ExplorationState {
        &self.state
    }
}

#[derive(Debug, Clone)]
pub struct WorkloadGraph {
    spec: GraphSpec,
    bugs: BTreeMap<usize, BugKnob>,
}

impl WorkloadGraph {
    pub fn new(spec: &GraphSpec) -> Result<Self, ExploreError> {
        spec.validate()?;
        let bugs = spec
            .bug_edges()
            .into_iter()
            .zip(&spec.bugs)
            .enumerate()
            .map(|(j, (id, &kind))| {
                let knob = BugKnob {
                    kind,
                    sites: 1,
                    offset: j as u32 + 1,
                };
                (id, knob)
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            bugs,
        })
    }

    pub fn spec(&self) -> &GraphSpec {
        &self.spec
    }

    pub fn bug_knob(&self, id: usize) -> Option<BugKnob> {
        self.bugs.get(&id).copied()
    }

    pub fn root(&self) -> Result<GraphNode, ExploreError> {
        self.edge(None, 0)
    }

    pub fn children(&self, node: &GraphNode) -> Result<Vec<GraphNode>, ExploreError> {
        if node.state.terminal {
            return Ok(Vec::new());
        }
        let b = self.spec.branching as usize;
        (node.state.id * b + 1..=node.state.id * b + b)
            .map(|id| self.edge(Some(node), id))
            .collect()
    }

    fn edge_seed(&self, id: usize) -> u64 {
        self.spec
            .seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(id as u64)
            .rotate_left(17)
    }

    fn edge(&self, parent: Option<&GraphNode>, id: usize) -> Result<GraphNode, ExploreError> {
        let (mut table, mut ops, mut machine, mut path_sites) = match parent {
            Some(p) => (
                p.table.clone(),
                p.ops.clone(),
                p.machine.clone(),
                p.path_sites.clone(),
            ),
            None => {
                let table = LevelTable::new(&TableConfig {
                    initial_exp: self.spec.initial_exp,
                    movement: true,
                    knobs: Vec::new(),
                });
                let machine = MachineState::scoped(table.regions());
                (table, OpGenerator::new(0), machine, BTreeSet::new())
            }
        };
        let start = if parent.is_some() {
            table.events().len()
        } else {
            0
        };
        ops.reseed(self.edge_seed(id));

        let mut remaining = self.spec.ops_per_edge;
        if let Some(knob) = self.bugs.get(&id) {
            table.set_knobs(&[*knob]);
            if matches!(
                knob.kind,
                KnobKind::FlushWholeHeader | KnobKind::NonAtomicInit
            ) {
                table.resize()?;
            }
            let op = ops.insert_op();
            ops.apply(&mut table, op)?;
            remaining -= 1;
        }
        for _ in 0..remaining {
            ops.step(&mut table)?;
        }
        table.set_knobs(&[]);

        let events = table.events();
        let mut reports = ReportSet::new();
        for event in &events[start..] {
            let signals = machine
                .apply_event(event)
                .expect("table traces have dense indices");
            reports.record_signals(&signals, events);
        }
        reports.sweep_unpersisted(&machine, events, table.regions());
        let bug_sites = reports
            .keys()
            .map(|(class, site)| format!("{} {site}", class.label()))
            .collect();

        let edge_sites: BTreeSet<String> = events[start..]
            .iter()
            .filter(|e| e.kind.is_pm_instruction())
            .map(|e| e.site.clone())
            .collect();
        let new_sites = edge_sites.difference(&path_sites).count();
        path_sites.extend(edge_sites.iter().cloned());

        let depth = self.spec.depth_of(id);
        let state = ExplorationState {
            id,
            parent: parent.map(|p| p.state.id),
            depth,
            emitted_events: events[start..].to_vec(),
            pm_pending: machine.pm_pending(),
            new_sites,
            terminal: depth == self.spec.depth,
        };
        Ok(GraphNode {
            state,
            bug_sites,
            edge_sites,
            table,
            ops,
            machine,
            path_sites,
        })
    }
}
