//! Seeded insert/lookup/delete workloads over a traced table.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::LevelHashError;
use crate::trace::Trace;

use super::knob::{BugKnob, KnobKind};
use super::table::{LevelTable, TableConfig, TableStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    Insert { key: u64, value: u64 },
    Lookup { key: u64 },
    Delete { key: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", content = "value", rename_all = "snake_case")]
pub enum OpResult {
    Inserted,
    Full,
    Found(Option<u64>),
    Deleted(bool),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpRecord {
    #[serde(flatten)]
    pub op: Op,
    #[serde(flatten)]
    pub result: OpResult,
}

/// Draws operations in a 60/30/10 insert/lookup/delete mix. Half of the
/// lookups target a live key; deletes always do. With no live key, a
/// delete becomes an insert.
#[derive(Debug, Clone)]
pub struct OpGenerator {
    rng: ChaCha8Rng,
    live: Vec<u64>,
    index: HashMap<u64, usize>,
}

impl OpGenerator {
    pub fn new(seed: u64) -> Self {
        Self::from_rng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn from_rng(rng: ChaCha8Rng) -> Self {
        Self {
            rng,
            live: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn live_keys(&self) -> &[u64] {
        &self.live
    }

    fn fresh_key(&mut self) -> u64 {
        loop {
            let k: u64 = self.rng.gen();
            if k != 0 && !self.index.contains_key(&k) {
                return k;
            }
        }
    }

    fn pick_live(&mut self) -> u64 {
        self.live[self.rng.gen_range(0..self.live.len())]
    }

    /// Restarts the random stream, keeping the live-key set.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn insert_op(&mut self) -> Op {
        Op::Insert {
            key: self.fresh_key(),
            value: self.rng.gen(),
        }
    }

    pub fn next_op(&mut self) -> Op {
        let roll = self.rng.gen_range(0..10u32);
        match roll {
            6..=8 => {
                let key = if !self.live.is_empty() && self.rng.gen_bool(0.5) {
                    self.pick_live()
                } else {
                    self.rng.gen::<u64>().max(1)
                };
                Op::Lookup { key }
            }
            9 if !self.live.is_empty() => Op::Delete {
                key: self.pick_live(),
            },
            _ => self.insert_op(),
        }
    }

    fn forget(&mut self, key: u64) {
        if let Some(i) = self.index.remove(&key) {
            self.live.swap_remove(i);
            if let Some(&moved) = self.live.get(i) {
                self.index.insert(moved, i);
            }
        }
    }

    /// Draws one op and applies it to `table`.
    pub fn step(&mut self, table: &mut LevelTable) -> Result<OpRecord, LevelHashError> {
        let op = self.next_op();
        self.apply(table, op)
    }

    /// Applies `op` to `table`, tracking the live-key set.
    pub fn apply(&mut self, table: &mut LevelTable, op: Op) -> Result<OpRecord, LevelHashError> {
        let result = match op {
            Op::Insert { key, value } => match table.insert(key, value) {
                Ok(()) => {
                    self.index.insert(key, self.live.len());
                    self.live.push(key);
                    OpResult::Inserted
                }
                Err(LevelHashError::TableFull(_)) => OpResult::Full,
                Err(e) => return Err(e),
            },
            Op::Lookup { key } => OpResult::Found(table.lookup(key)),
            Op::Delete { key } => {
                let deleted = table.delete(key);
                self.forget(key);
                OpResult::Deleted(deleted)
            }
        };
        Ok(OpRecord { op, result })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub ops: usize,
    pub seed: u64,
    pub initial_exp: u32,
    pub movement: bool,
    pub knobs: Vec<BugKnob>,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        let table = TableConfig::default();
        Self {
            ops: 100,
            seed: 0,
            initial_exp: table.initial_exp,
            movement: table.movement,
            knobs: Vec::new(),
        }
    }
}

impl WorkloadConfig {
    /// Recipe of the bundled `levelhash_table1` fixture: 60 unpersisted-slot
    /// sites, two whole-header flush sites and three extra-fence sites.
    pub fn table1() -> Self {
        Self {
            ops: 400,
            seed: 2024,
            initial_exp: 1,
            movement: true,
            knobs: vec![
                BugKnob::with_sites(KnobKind::MissingFenceTokenValue, 60),
                BugKnob::with_sites(KnobKind::FlushWholeHeader, 2),
                BugKnob::with_sites(KnobKind::ExtraFenceLoop, 3),
            ],
        }
    }

    pub fn table_config(&self) -> TableConfig {
        TableConfig {
            initial_exp: self.initial_exp,
            movement: self.movement,
            knobs: self.knobs.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Workload {
    pub trace: Trace,
    pub log: Vec<OpRecord>,
    pub stats: TableStats,
}

pub fn generate_workload(config: &WorkloadConfig) -> Result<Workload, LevelHashError> {
    let mut table = LevelTable::new(&config.table_config());
    let mut gen = OpGenerator::new(config.seed);
    let log = (0..config.ops)
        .map(|_| gen.step(&mut table))
        .collect::<Result<Vec<_>, _>>()?;
    let stats = table.stats();
    Ok(Workload {
        trace: table.into_trace(),
        log,
        stats,
    })
}
