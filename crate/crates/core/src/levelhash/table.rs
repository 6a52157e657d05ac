use std::collections::HashMap;

use crate::error::LevelHashError;
use crate::trace::{
    line_base, EventKind, RegionTable, Trace, TraceBuilder, TraceEvent, CACHE_LINE,
};

use super::knob::{variant_site, BugKnob, KnobKind, KnobSet};
use super::layout::{
    ByteView, Header, Level, LevelRole, BUCKET_SIZE, HEADER_ADDR, HEADER_BYTES, HEADER_LINES,
    HEAP_BASE, HEAP_SIZE, OFF_LEVEL_EXP, OFF_RESIZE, SEED_1, SEED_2, SLOTS_PER_BUCKET, SLOT_SIZE,
};
use super::sites;

const FULL_TOKEN: u8 = (1 << SLOTS_PER_BUCKET) - 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableConfig {
    /// log2 of the initial bottom-level bucket count.
    pub initial_exp: u32,
    /// Try one-step movement before resizing.
    pub movement: bool,
    pub knobs: Vec<BugKnob>,
}

impl Default for TableConfig {
    fn default() -> Self {
        Self {
            initial_exp: 2,
            movement: true,
            knobs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TableStats {
    pub items: usize,
    pub moves: usize,
    pub resizes: usize,
    /// Successful inserts before the first resize.
    pub inserts_before_first_resize: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResizeStats {
    pub rehashed: usize,
}

/// Level hashing table whose every persistent mutation is traced.
#[derive(Debug, Clone)]
pub struct LevelTable {
    heap: HashMap<u64, [u8; 64]>,
    trace: TraceBuilder,
    header: Header,
    next_alloc: u64,
    movement: bool,
    knobs: KnobSet,
    stats: TableStats,
    inserts: usize,
}

impl LevelTable {
    /// Declares the heap region and writes the initial header.
    pub fn new(config: &TableConfig) -> Self {
        let mut trace = TraceBuilder::new();
        trace
            .push(
                EventKind::Region {
                    addr: HEAP_BASE,
                    size: HEAP_SIZE,
                    persistent: true,
                },
                "",
                0,
            )
            .expect("fresh trace accepts the heap region");
        let exp = u64::from(config.initial_exp);
        let mut table = Self {
            heap: HashMap::new(),
            trace,
            header: Header {
                level_exp: exp,
                top: 0,
                bottom: 0,
                resize: 0,
                seeds: [SEED_1, SEED_2],
            },
            next_alloc: HEAP_BASE + HEADER_BYTES,
            movement: config.movement,
            knobs: KnobSet::new(&config.knobs),
            stats: TableStats::default(),
            inserts: 0,
        };
        table.header.top = table.alloc(2 << exp);
        table.header.bottom = table.alloc(1 << exp);
        let encoded = table.header.encode();
        table.write_header(0, &encoded, sites::INIT_HEADER_STORE);
        table
    }

    pub fn header(&self) -> &Header {
        &self.header
    }

    pub fn stats(&self) -> TableStats {
        self.stats
    }

    pub fn len(&self) -> usize {
        self.stats.items
    }

    pub fn is_empty(&self) -> bool {
        self.stats.items == 0
    }

    /// Program-order heap contents.
    pub fn heap(&self) -> &HashMap<u64, [u8; 64]> {
        &self.heap
    }

    pub fn events(&self) -> &[TraceEvent] {
        self.trace.events()
    }

    pub fn regions(&self) -> &RegionTable {
        self.trace.regions()
    }

    pub fn trace(&self) -> Trace {
        self.trace.clone().finish()
    }

    pub fn into_trace(self) -> Trace {
        self.trace.finish()
    }

    /// Replaces the active bug knobs (firing counters restart).
    pub fn set_knobs(&mut self, knobs: &[BugKnob]) {
        self.knobs.set(knobs);
    }

    pub fn level(&self, role: LevelRole) -> Level {
        self.header
            .level(role)
            .expect("top and bottom always exist")
    }

    fn alloc(&mut self, buckets: u64) -> u64 {
        let addr = self.next_alloc;
        self.next_alloc += Level::footprint(buckets).div_ceil(CACHE_LINE) * CACHE_LINE;
        addr
    }

    // -- raw heap access -------------------------------------------------

    fn store(&mut self, addr: u64, bytes: &[u8], site: &str) {
        let base = line_base(addr);
        let off = (addr - base) as usize;
        self.heap.entry(base).or_insert([0; 64])[off..off + bytes.len()].copy_from_slice(bytes);
        self.trace
            .store(addr, bytes, site)
            .expect("table stores never straddle a line");
    }

    fn token(&self, level: Level, bucket: u64) -> u8 {
        self.heap.read_u8(level.token_addr(bucket))
    }

    fn slot(&self, level: Level, bucket: u64, slot: usize) -> (u64, u64) {
        let addr = level.slot_addr(bucket, slot);
        (self.heap.read_u64(addr), self.heap.read_u64(addr + 8))
    }

    fn free_slot(&self, level: Level, bucket: u64) -> Option<usize> {
        let token = self.token(level, bucket);
        (0..SLOTS_PER_BUCKET).find(|s| token & (1 << s) == 0)
    }

    // -- persistence steps -----------------------------------------------

    /// Header store followed by its flush and fence.
    fn write_header(&mut self, offset: u64, bytes: &[u8], store_site: &str) {
        let unflushed = self.knobs.fire(KnobKind::NonAtomicInit);
        let store_site = variant_site(store_site, unflushed.unwrap_or(0));
        self.store(HEADER_ADDR + offset, bytes, &store_site);
        if unflushed.is_none() {
            match self.knobs.fire(KnobKind::FlushWholeHeader) {
                Some(v) => {
                    let site = variant_site(sites::HEADER_FLUSH, v);
                    for line in 0..HEADER_LINES {
                        self.trace.flush(HEADER_ADDR + line * CACHE_LINE, &site);
                    }
                }
                None => self.trace.flush(HEADER_ADDR, sites::HEADER_FLUSH),
            }
        }
        self.trace.fence(sites::HEADER_FENCE);
    }

    /// Writes a key/value pair into a slot. Persisted unless a knob says otherwise.
    fn write_kv(&mut self, level: Level, bucket: u64, slot: usize, key: u64, value: u64) {
        let mut kv = [0u8; SLOT_SIZE as usize];
        kv[..8].copy_from_slice(&key.to_le_bytes());
        kv[8..].copy_from_slice(&value.to_le_bytes());
        let addr = level.slot_addr(bucket, slot);
        let skip_persist = self.knobs.fire(KnobKind::MissingFenceTokenValue);
        self.store(
            addr,
            &kv,
            &variant_site(sites::SLOT_STORE, skip_persist.unwrap_or(0)),
        );
        if skip_persist.is_some() {
            return;
        }
        match self.knobs.fire(KnobKind::ClwbArbitraryRange) {
            Some(v) => {
                let site = variant_site(sites::SLOT_FLUSH, v);
                let bucket_addr = level.bucket_addr(bucket);
                for step in (0..BUCKET_SIZE).step_by(SLOT_SIZE as usize) {
                    self.trace.flush(bucket_addr + step, &site);
                }
            }
            None => self.trace.flush(addr, sites::SLOT_FLUSH),
        }
        self.trace.fence(sites::SLOT_FENCE);
    }

    /// Stores a token byte, then flushes and fences it.
    fn write_token(&mut self, level: Level, bucket: u64, token: u8, steps: [&str; 3]) {
        let [store_site, flush_site, fence_site] = steps;
        let addr = level.token_addr(bucket);
        match self.knobs.fire(KnobKind::MissingFlushToken) {
            Some(v) => self.store(addr, &[token], &variant_site(store_site, v)),
            None => {
                self.store(addr, &[token], store_site);
                self.trace.flush(addr, flush_site);
            }
        }
        self.trace.fence(fence_site);
    }

    /// Copies an item to `dst`, publishes the copy, then retires the source.
    #[allow(clippy::too_many_arguments)]
    fn relocate(
        &mut self,
        src: (Level, u64, usize),
        dst: (Level, u64, usize),
        key: u64,
        value: u64,
        is_movement: bool,
    ) {
        let (src_level, src_bucket, src_slot) = src;
        let (dst_level, dst_bucket, dst_slot) = dst;
        self.write_kv(dst_level, dst_bucket, dst_slot, key, value);
        let token = self.token(dst_level, dst_bucket) | (1 << dst_slot);
        self.write_token(
            dst_level,
            dst_bucket,
            token,
            [
                sites::RELOC_TOKEN_STORE,
                sites::RELOC_TOKEN_FLUSH,
                sites::RELOC_TOKEN_FENCE,
            ],
        );
        let skip_clear = is_movement && self.knobs.fire(KnobKind::DuplicateOnMove).is_some();
        if skip_clear {
            self.trace
                .flush(src_level.token_addr(src_bucket), sites::RELOC_CLEAR_FLUSH);
            self.trace.fence(sites::RELOC_CLEAR_FENCE);
        } else {
            let token = self.token(src_level, src_bucket) & !(1 << src_slot);
            self.write_token(
                src_level,
                src_bucket,
                token,
                [
                    sites::RELOC_CLEAR_STORE,
                    sites::RELOC_CLEAR_FLUSH,
                    sites::RELOC_CLEAR_FENCE,
                ],
            );
        }
    }

    // -- operations ------------------------------------------------------

    /// Candidate buckets in probe order: top H1, top H2, bottom H1, bottom H2.
    fn candidates(&self, key: u64) -> [(LevelRole, u64); 4] {
        let seeds = self.header.seeds;
        let [t1, t2] = self.level(LevelRole::Top).candidates(key, seeds);
        let [b1, b2] = self.level(LevelRole::Bottom).candidates(key, seeds);
        [
            (LevelRole::Top, t1),
            (LevelRole::Top, t2),
            (LevelRole::Bottom, b1),
            (LevelRole::Bottom, b2),
        ]
    }

    fn locate(&self, key: u64) -> Option<(LevelRole, u64, usize, u64)> {
        self.candidates(key).into_iter().find_map(|(role, bucket)| {
            let level = self.level(role);
            let token = self.token(level, bucket);
            (0..SLOTS_PER_BUCKET)
                .filter(|s| token & (1 << s) != 0)
                .find_map(|s| {
                    let (k, v) = self.slot(level, bucket, s);
                    (k == key).then_some((role, bucket, s, v))
                })
        })
    }

    pub fn lookup(&self, key: u64) -> Option<u64> {
        self.locate(key).map(|(_, _, _, v)| v)
    }

    pub fn contains(&self, key: u64) -> bool {
        self.locate(key).is_some()
    }

    /// Position of `key` as (level, bucket, slot).
    pub fn position(&self, key: u64) -> Option<(LevelRole, u64, usize)> {
        self.locate(key).map(|(r, b, s, _)| (r, b, s))
    }

    pub fn insert(&mut self, key: u64, value: u64) -> Result<(), LevelHashError> {
        if key == 0 {
            return Err(LevelHashError::ReservedKey);
        }
        if self.contains(key) {
            return Err(LevelHashError::Duplicate(key));
        }
        let target = match self.find_target(key) {
            Some(t) => t,
            None => {
                self.resize()?;
                self.find_target(key)
                    .ok_or(LevelHashError::TableFull(key))?
            }
        };
        let (role, bucket, slot) = target;
        let level = self.level(role);
        self.write_kv(level, bucket, slot, key, value);
        let token = self.token(level, bucket) | (1 << slot);
        self.write_token(
            level,
            bucket,
            token,
            [
                sites::INSERT_TOKEN_STORE,
                sites::INSERT_TOKEN_FLUSH,
                sites::INSERT_TOKEN_FENCE,
            ],
        );
        if let Some(v) = self.knobs.fire(KnobKind::ExtraFenceLoop) {
            let site = variant_site(sites::EXTRA_FENCE, v);
            for _ in 0..2 {
                self.trace.fence(&site);
            }
        }
        self.stats.items += 1;
        self.inserts += 1;
        Ok(())
    }

    /// A free slot among the candidates, making room by movement if allowed.
    fn find_target(&mut self, key: u64) -> Option<(LevelRole, u64, usize)> {
        let candidates = self.candidates(key);
        for (role, bucket) in candidates {
            if let Some(slot) = self.free_slot(self.level(role), bucket) {
                return Some((role, bucket, slot));
            }
        }
        if !self.movement {
            return None;
        }
        candidates.into_iter().find_map(|(role, bucket)| {
            self.one_step_movement(role, bucket)
                .ok()
                .map(|slot| (role, bucket, slot))
        })
    }

    /// Relocates one occupant of a full bucket to its alternate bucket on the
    /// same level. Occupants are tried from slot 0 to 3; the first one whose
    /// alternate has room moves. Returns the freed slot.
    pub fn one_step_movement(
        &mut self,
        role: LevelRole,
        bucket: u64,
    ) -> Result<usize, LevelHashError> {
        let level = self.level(role);
        let token = self.token(level, bucket);
        for slot in 0..SLOTS_PER_BUCKET {
            if token & (1 << slot) == 0 {
                continue;
            }
            let (key, value) = self.slot(level, bucket, slot);
            let [h1, h2] = level.candidates(key, self.header.seeds);
            let alt = if h1 == bucket { h2 } else { h1 };
            if alt == bucket {
                continue;
            }
            if let Some(dst_slot) = self.free_slot(level, alt) {
                self.relocate(
                    (level, bucket, slot),
                    (level, alt, dst_slot),
                    key,
                    value,
                    true,
                );
                self.stats.moves += 1;
                return Ok(slot);
            }
        }
        Err(LevelHashError::NoRelocatableOccupant)
    }

    pub fn delete(&mut self, key: u64) -> bool {
        let Some((role, bucket, slot, _)) = self.locate(key) else {
            return false;
        };
        let level = self.level(role);
        let token = self.token(level, bucket) & !(1 << slot);
        self.write_token(
            level,
            bucket,
            token,
            [
                sites::DELETE_TOKEN_STORE,
                sites::DELETE_TOKEN_FLUSH,
                sites::DELETE_TOKEN_FENCE,
            ],
        );
        self.stats.items -= 1;
        true
    }

    /// Grows the table: a new top level with twice the buckets of the current
    /// top is allocated, bottom items are rehashed into it, the old top
    /// becomes the bottom level as is, and the header switches in one line
    /// write.
    pub fn resize(&mut self) -> Result<ResizeStats, LevelHashError> {
        if self.stats.inserts_before_first_resize.is_none() {
            self.stats.inserts_before_first_resize = Some(self.inserts);
        }
        let n = self.header.bottom_buckets();
        let new_addr = self.alloc(4 * n);
        let new_level = Level {
            addr: new_addr,
            buckets: 4 * n,
        };
        self.header.resize = new_addr;
        self.write_header(
            OFF_RESIZE,
            &new_addr.to_le_bytes(),
            sites::RESIZE_BEGIN_STORE,
        );

        let bottom = self.level(LevelRole::Bottom);
        let mut rehashed = 0;
        for bucket in 0..bottom.buckets {
            let token = self.token(bottom, bucket);
            if token == 0 {
                continue;
            }
            for slot in 0..SLOTS_PER_BUCKET {
                if token & (1 << slot) == 0 {
                    continue;
                }
                let (key, value) = self.slot(bottom, bucket, slot);
                let dst = new_level
                    .candidates(key, self.header.seeds)
                    .into_iter()
                    .find_map(|b| self.free_slot(new_level, b).map(|s| (b, s)))
                    .ok_or(LevelHashError::TableFull(key))?;
                self.relocate(
                    (bottom, bucket, slot),
                    (new_level, dst.0, dst.1),
                    key,
                    value,
                    false,
                );
                rehashed += 1;
            }
        }

        let committed = Header {
            level_exp: self.header.level_exp + 1,
            top: new_addr,
            bottom: self.header.top,
            resize: 0,
            seeds: self.header.seeds,
        };
        let encoded = committed.encode();
        // level_exp, top, bottom and resize are contiguous: one 32-byte store.
        let (from, to) = (OFF_LEVEL_EXP as usize, OFF_RESIZE as usize + 8);
        self.write_header(
            OFF_LEVEL_EXP,
            &encoded[from..to],
            sites::RESIZE_COMMIT_STORE,
        );
        self.header = committed;
        self.stats.resizes += 1;
        Ok(ResizeStats { rehashed })
    }

    /// Every live (key, value) in probe-level order.
    pub fn entries(&self) -> Vec<(u64, u64)> {
        let mut out = Vec::with_capacity(self.stats.items);
        for role in [LevelRole::Top, LevelRole::Bottom] {
            let level = self.level(role);
            for bucket in 0..level.buckets {
                let token = self.token(level, bucket);
                for slot in 0..SLOTS_PER_BUCKET {
                    if token & (1 << slot) != 0 {
                        out.push(self.slot(level, bucket, slot));
                    }
                }
            }
        }
        out
    }

    /// Whether every candidate bucket of `key` is full.
    pub fn candidates_full(&self, key: u64) -> bool {
        self.candidates(key)
            .into_iter()
            .all(|(role, b)| self.token(self.level(role), b) == FULL_TOKEN)
    }
}
