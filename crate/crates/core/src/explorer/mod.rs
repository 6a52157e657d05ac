//! Frontier-selection policies over a branching workload graph.
//!
//! Each expansion pops a frontier state, scores what its incoming edge
//! revealed, and pushes the state's children. Three policies pick the next
//! state: uniform random, PM-Aware (most non-durable persistent lines), and
//! tabular Q-learning whose actions are pm_pending buckets of the frontier.

mod graph;
mod qlearn;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::ExploreError;

pub use graph::{ExplorationState, GraphNode, GraphSpec, WorkloadGraph, MAX_BRANCHING, MAX_STATES};
pub use qlearn::{q_update, QConfig, QTable, ReplayBuffer, Transition};

/// Number of Q-learning actions (pm_pending buckets).
pub const ACTIONS: usize = 4;

/// pm_pending bucket: 0, 1, 2–3, 4+.
pub fn pending_bucket(pm_pending: usize) -> usize {
    match pm_pending {
        0 => 0,
        1 => 1,
        2..=3 => 2,
        _ => 3,
    }
}

/// Bucketized features of a state.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey {
    pub pending: u8,
    pub depth: u8,
    pub new_sites: u8,
}

impl StateKey {
    pub fn of(state: &ExplorationState) -> Self {
        Self {
            pending: pending_bucket(state.pm_pending) as u8,
            depth: state.depth.min(3) as u8,
            new_sites: match state.new_sites {
                0 => 0,
                1..=2 => 1,
                _ => 2,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    Random,
    PmAware,
    #[serde(rename = "qlearn")]
    QLearn,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Random, Policy::PmAware, Policy::QLearn];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Random => "random",
            Policy::PmAware => "pm-aware",
            Policy::QLearn => "qlearn",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = ExploreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| ExploreError::Config(format!("unknown policy {s:?}")))
    }
}

/// Index into `frontier` of the state to expand next.
///
/// # Panics
/// If `frontier` is empty.
pub fn select_state<T: AsRef<ExplorationState>>(
    frontier: &[T],
    policy: Policy,
    q: &QTable<StateKey>,
    current: &StateKey,
    epsilon: f64,
    rng: &mut impl Rng,
) -> usize {
    assert!(!frontier.is_empty(), "select_state on an empty frontier");
    let argmax_by = |score: &dyn Fn(&ExplorationState) -> f64| {
        let mut best = 0;
        for (i, s) in frontier.iter().enumerate().skip(1) {
            let (s, b) = (s.as_ref(), frontier[best].as_ref());
            let (x, y) = (score(s), score(b));
            if x > y || (x == y && s.id < b.id) {
                best = i;
            }
        }
        best
    };
    match policy {
        Policy::Random => rng.gen_range(0..frontier.len()),
        Policy::PmAware => argmax_by(&|s| s.pm_pending as f64),
        Policy::QLearn => {
            if epsilon > 0.0 && rng.gen_bool(epsilon) {
                rng.gen_range(0..frontier.len())
            } else {
                argmax_by(&|s| q.get(current, pending_bucket(s.pm_pending)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub expansion: usize,
    pub bug_sites: usize,
    pub pm_sites: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationResult {
    pub policy: Policy,
    pub budget: usize,
    pub expansions: usize,
    /// Unique bug sites found, sorted.
    pub bug_sites: Vec<String>,
    pub pm_sites_covered: usize,
    /// Cumulative counts after each expansion.
    pub discovery_curve: Vec<CurvePoint>,
    /// Expanded node ids in order.
    pub order: Vec<usize>,
}

pub fn run_exploration(
    spec: &GraphSpec,
    policy: Policy,
    budget: usize,
    config: &QConfig,
) -> Result<ExplorationResult, ExploreError> {
    if budget == 0 {
        return Err(ExploreError::ZeroBudget);
    }
    config.validate()?;
    let graph = WorkloadGraph::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut q = QTable::new(ACTIONS);
    let mut replay = ReplayBuffer::new(config.replay_capacity);
    let mut current = StateKey::default();
    let mut frontier = vec![graph.root()?];
    let mut bugs = BTreeSet::new();
    let mut sites = BTreeSet::new();
    let mut curve = Vec::new();
    let mut order = Vec::new();

    while order.len() < budget && !frontier.is_empty() {
        let pick = select_state(&frontier, policy, &q, &current, config.epsilon, &mut rng);
        let node = frontier.remove(pick);
        let new_bugs = node
            .bug_sites
            .iter()
            .filter(|s| bugs.insert((*s).clone()))
            .count();
        let new_sites = node
            .edge_sites
            .iter()
            .filter(|s| sites.insert((*s).clone()))
            .count();
        let next = StateKey::of(&node.state);
        if policy == Policy::QLearn {
            let reward =
                config.bug_reward * new_bugs as f64 + config.site_reward * new_sites as f64;
            replay.push(Transition {
                state: current,
                action: pending_bucket(node.state.pm_pending),
                reward,
                next,
            });
            for t in replay.sample(config.batch_size, &mut rng) {
                q_update(&mut q, &t.state, t.action, t.reward, Some(&t.next), config);
            }
        }
        current = next;
        order.push(node.state.id);
        curve.push(CurvePoint {
            expansion: order.len(),
            bug_sites: bugs.len(),
            pm_sites: sites.len(),
        });
        frontier.extend(graph.children(&node)?);
    }

    Ok(ExplorationResult {
        policy,
        budget,
        expansions: order.len(),
        bug_sites: bugs.into_iter().collect(),
        pm_sites_covered: sites.len(),
        discovery_curve: curve,
        order,
    })
}

/// Runs every policy on the same graph, in parallel.
pub fn compare_policies(
    spec: &GraphSpec,
    budget: usize,
    config: &QConfig,
) -> Result<Vec<ExplorationResult>, ExploreError> {
    Policy::ALL
        .par_iter()
        .map(|&p| run_exploration(spec, p, budget, config))
        .collect()
}
