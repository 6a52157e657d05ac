//! Test oracles written independently of the crate's implementations.
#![allow(dead_code)]

pub mod explore;

use std::collections::{BTreeMap, BTreeSet};

use pmbugs::explorer::{q_update, QConfig, QTable};
use pmbugs::levelhash::{LevelTable, Op, OpGenerator, OpResult, TableConfig};
use pmbugs::{EventKind, Trace, TraceBuilder};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LINE: u64 = 64;

pub type Image = BTreeMap<u64, [u8; 64]>;
/// Images keyed by included pending lines, with all-zero lines dropped.
pub type ImageSet = BTreeSet<(Vec<u64>, Vec<(u64, [u8; 64])>)>;

/// Random trace over `lines` persistent cache lines starting at 0. Every
/// store fits one line; sizes are powers of two up to 64 at aligned offsets.
pub fn random_trace(rng: &mut impl Rng, lines: u64, events: usize) -> Trace {
    let mut b = pm_builder(lines);
    random_events(&mut b, rng, lines, events);
    b.finish()
}

fn pm_builder(lines: u64) -> TraceBuilder {
    let mut b = TraceBuilder::new();
    b.push(
        EventKind::Region {
            addr: 0,
            size: lines * LINE,
            persistent: true,
        },
        "",
        0,
    )
    .unwrap();
    b
}

fn random_events(b: &mut TraceBuilder, rng: &mut impl Rng, lines: u64, events: usize) {
    for _ in 0..events {
        let line = rng.gen_range(0..lines) * LINE;
        match rng.gen_range(0..10) {
            0..=4 => {
                let size = 1u64 << rng.gen_range(0..=6);
                let off = rng.gen_range(0..LINE / size) * size;
                let bytes: Vec<u8> = (0..size).map(|_| rng.gen()).collect();
                let site = format!("s.c:{}", rng.gen_range(0..5));
                b.store(line + off, &bytes, &site).unwrap();
            }
            5..=7 => b.flush(
                line + rng.gen_range(0..LINE),
                &format!("f.c:{}", rng.gen_range(0..3)),
            ),
            _ => b.fence(&format!("x.c:{}", rng.gen_range(0..2))),
        }
    }
}

/// Crash-enumeration case for `seed` over 12 lines. Even seeds cut a
/// random trace at a random point. Odd seeds append stores and flushes to
/// `seed / 2 % 13` distinct lines and crash at the end, so the pending set
/// covers every size from 0 to 12.
pub fn crash_case(seed: u64) -> (Trace, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if seed.is_multiple_of(2) {
        let t = random_trace(&mut rng, 12, 80);
        let at = rng.gen_range(0..=t.len());
        return (t, at);
    }
    let mut b = pm_builder(12);
    random_events(&mut b, &mut rng, 12, 40);
    let mut tail: Vec<u64> = (0..12).collect();
    tail.shuffle(&mut rng);
    tail.truncate((seed / 2 % 13) as usize);
    for &l in &tail {
        b.store(
            l * LINE + rng.gen_range(0..8) * 8,
            &rng.gen::<[u8; 8]>(),
            "t.c:1",
        )
        .unwrap();
    }
    tail.shuffle(&mut rng);
    for &l in &tail {
        b.flush(l * LINE, "t.c:2");
    }
    let t = b.finish();
    let at = t.len();
    (t, at)
}

/// Naive persistence model: cache and durable contents plus the set of
/// lines flushed since their last store. Returns (durable, cache, pending)
/// after the first `upto` events.
pub fn naive_state(trace: &Trace, upto: usize) -> (Image, Image, BTreeSet<u64>) {
    let mut durable: BTreeMap<u64, [u8; 64]> = BTreeMap::new();
    let mut cache: BTreeMap<u64, [u8; 64]> = BTreeMap::new();
    let mut pending = BTreeSet::new();
    let mut dirty = BTreeSet::new();
    for e in &trace.events[..upto] {
        match &e.kind {
            EventKind::Store { addr, value } => {
                let base = addr - addr % LINE;
                durable.entry(base).or_insert([0; 64]);
                let line = cache.entry(base).or_insert([0; 64]);
                let off = (addr - base) as usize;
                line[off..off + value.len()].copy_from_slice(value);
                pending.remove(&base);
                dirty.insert(base);
            }
            EventKind::Flush { addr, .. } => {
                let base = addr - addr % LINE;
                if dirty.remove(&base) {
                    pending.insert(base);
                }
            }
            EventKind::Fence => {
                for base in std::mem::take(&mut pending) {
                    durable.insert(base, cache[&base]);
                }
            }
            _ => {}
        }
    }
    (durable, cache, pending)
}

/// Image with all-zero lines dropped, so models that materialize untouched
/// lines compare equal to ones that don't.
pub fn normalize(image: &BTreeMap<u64, [u8; 64]>) -> Vec<(u64, [u8; 64])> {
    image
        .iter()
        .filter(|(_, c)| c.iter().any(|&b| b != 0))
        .map(|(&l, &c)| (l, c))
        .collect()
}

/// Every (included lines, image) pair reachable at `upto`, built by
/// recursive inclusion/exclusion over the pending lines.
pub fn brute_force_images(trace: &Trace, upto: usize) -> ImageSet {
    let (durable, cache, pending) = naive_state(trace, upto);
    let pending: Vec<u64> = pending.into_iter().collect();
    let mut out = BTreeSet::new();
    fn go(
        i: usize,
        pending: &[u64],
        chosen: &mut Vec<u64>,
        durable: &BTreeMap<u64, [u8; 64]>,
        cache: &BTreeMap<u64, [u8; 64]>,
        out: &mut ImageSet,
    ) {
        if i == pending.len() {
            let mut img = durable.clone();
            for l in chosen.iter() {
                img.insert(*l, cache[l]);
            }
            let mut included = chosen.clone();
            included.sort_unstable();
            out.insert((included, normalize(&img)));
            return;
        }
        go(i + 1, pending, chosen, durable, cache, out);
        chosen.push(pending[i]);
        go(i + 1, pending, chosen, durable, cache, out);
        chosen.pop();
    }
    go(0, &pending, &mut Vec::new(), &durable, &cache, &mut out);
    out
}

/// Deterministic chain: states 0..n, action 0 moves left (floor 0), action
/// 1 moves right. Entering state n-1 ends the episode with reward 1.
pub struct Chain {
    pub n: usize,
}

impl Chain {
    /// (next state, reward, terminal)
    pub fn step(&self, s: usize, a: usize) -> (usize, f64, bool) {
        let next = if a == 1 { s + 1 } else { s.saturating_sub(1) };
        if next == self.n - 1 {
            (next, 1.0, true)
        } else {
            (next, 0.0, false)
        }
    }

    /// Optimal action per non-terminal state by value iteration.
    pub fn value_iteration_policy(&self, gamma: f64) -> Vec<usize> {
        let mut v = vec![0.0f64; self.n];
        let q = |v: &[f64], s: usize, a: usize| {
            let (next, r, terminal) = self.step(s, a);
            r + if terminal { 0.0 } else { gamma * v[next] }
        };
        for _ in 0..1000 {
            let mut nv = v.clone();
            for (s, value) in nv.iter_mut().enumerate().take(self.n - 1) {
                *value = q(&v, s, 0).max(q(&v, s, 1));
            }
            v = nv;
        }
        (0..self.n - 1)
            .map(|s| usize::from(q(&v, s, 1) > q(&v, s, 0)))
            .collect()
    }
}

/// Steps before an episode is cut short and restarted.
pub const EPISODE_LEN: usize = 10;

/// Epsilon-greedy Q-learning on `chain`. Episodes start in a random state
/// and last until the goal or `EPISODE_LEN` steps.
pub fn train_chain(chain: &Chain, config: &QConfig, updates: usize, seed: u64) -> QTable<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = QTable::new(2);
    let mut s = rng.gen_range(0..chain.n - 1);
    let mut steps = 0;
    for _ in 0..updates {
        let a = if rng.gen_bool(config.epsilon) {
            rng.gen_range(0..2)
        } else {
            q.greedy(&s)
        };
        let (next, r, terminal) = chain.step(s, a);
        q_update(&mut q, &s, a, r, (!terminal).then_some(&next), config);
        steps += 1;
        s = if terminal || steps == EPISODE_LEN {
            steps = 0;
            rng.gen_range(0..chain.n - 1)
        } else {
            next
        };
    }
    q
}

/// Runs `ops` seeded operations against a bug-free table and a `BTreeMap`.
/// Returns (lookups checked, mismatches).
pub fn membership_check(ops: usize, seed: u64) -> (usize, usize) {
    let mut table = LevelTable::new(&TableConfig::default());
    let mut gen = OpGenerator::new(seed);
    let mut oracle = BTreeMap::new();
    let (mut lookups, mut mismatches) = (0, 0);
    for _ in 0..ops {
        let rec = gen.step(&mut table).unwrap();
        match (rec.op, rec.result) {
            (Op::Insert { key, value }, OpResult::Inserted) => {
                oracle.insert(key, value);
            }
            (Op::Delete { key }, OpResult::Deleted(d)) => {
                if d != oracle.remove(&key).is_some() {
                    mismatches += 1;
                }
            }
            (Op::Lookup { key }, OpResult::Found(v)) => {
                lookups += 1;
                if v != oracle.get(&key).copied() {
                    mismatches += 1;
                }
            }
            _ => mismatches += 1,
        }
    }
    for (k, v) in &oracle {
        lookups += 1;
        if table.lookup(*k) != Some(*v) {
            mismatches += 1;
        }
    }
    (lookups, mismatches)
}

/// Keys whose top-level H1 bucket is 0 in a fresh default table: every one
/// of them competes for the same first-choice bucket.
pub fn adversarial_keys(count: usize) -> Vec<u64> {
    let table = LevelTable::new(&TableConfig::default());
    let top = table.level(pmbugs::levelhash::LevelRole::Top);
    (1u64..)
        .filter(|&k| top.candidates(k, table.header().seeds)[0] == 0)
        .take(count)
        .collect()
}

/// Successful inserts of `keys` before the first resize.
pub fn inserts_before_resize(keys: &[u64], movement: bool) -> usize {
    let mut table = LevelTable::new(&TableConfig {
        movement,
        ..TableConfig::default()
    });
    for &k in keys {
        table.insert(k, k).unwrap();
        if let Some(n) = table.stats().inserts_before_first_resize {
            return n;
        }
    }
    keys.len()
}
