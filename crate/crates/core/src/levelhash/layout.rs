//! Byte layout of the level hashing table in the simulated persistent heap.
//! `docs/layout.md` describes the same layout for readers of raw images.

use std::collections::{BTreeMap, HashMap};

use crate::pm_state::MachineState;
use crate::trace::{line_base, CACHE_LINE};

pub const HEAP_BASE: u64 = 0x10_0000;
pub const HEAP_SIZE: u64 = 1 << 36;

/// The pool header spans four lines; only the first carries table metadata.
pub const HEADER_ADDR: u64 = HEAP_BASE;
pub const HEADER_LINES: u64 = 4;
pub const HEADER_BYTES: u64 = HEADER_LINES * CACHE_LINE;

pub const MAGIC: u64 = u64::from_le_bytes(*b"LVLHASH1");

pub const OFF_MAGIC: u64 = 0;
pub const OFF_LEVEL_EXP: u64 = 8;
pub const OFF_TOP: u64 = 16;
pub const OFF_BOTTOM: u64 = 24;
pub const OFF_RESIZE: u64 = 32;
pub const OFF_SEED1: u64 = 40;
pub const OFF_SEED2: u64 = 48;

pub const SLOTS_PER_BUCKET: usize = 4;
pub const SLOT_SIZE: u64 = 16;
pub const BUCKET_SIZE: u64 = SLOTS_PER_BUCKET as u64 * SLOT_SIZE;

/// Largest accepted bottom-level exponent when decoding images.
pub const MAX_LEVEL_EXP: u64 = 32;

pub const SEED_1: u64 = 0x9e37_79b9_7f4a_7c15;
pub const SEED_2: u64 = 0xc2b2_ae3d_27d4_eb4f;

/// Multiply-shift hash: high half of the 64-bit product. Seeds are odd.
#[inline]
pub fn hash(key: u64, seed: u64) -> u64 {
    key.wrapping_mul(seed) >> 32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Level {
    pub addr: u64,
    pub buckets: u64,
}

impl Level {
    /// One token byte per bucket, padded to whole lines.
    pub fn token_bytes(buckets: u64) -> u64 {
        buckets.div_ceil(CACHE_LINE) * CACHE_LINE
    }

    pub fn footprint(buckets: u64) -> u64 {
        Self::token_bytes(buckets) + buckets * BUCKET_SIZE
    }

    pub fn token_addr(&self, bucket: u64) -> u64 {
        self.addr + bucket
    }

    pub fn bucket_addr(&self, bucket: u64) -> u64 {
        self.addr + Self::token_bytes(self.buckets) + bucket * BUCKET_SIZE
    }

    pub fn slot_addr(&self, bucket: u64, slot: usize) -> u64 {
        self.bucket_addr(bucket) + slot as u64 * SLOT_SIZE
    }

    /// The two candidate buckets of `key` in this level.
    pub fn candidates(&self, key: u64, seeds: [u64; 2]) -> [u64; 2] {
        let mask = self.buckets - 1;
        [hash(key, seeds[0]) & mask, hash(key, seeds[1]) & mask]
    }

    /// Bucket whose token byte lives at `addr`, if any.
    pub fn bucket_of_token(&self, addr: u64) -> Option<u64> {
        (addr >= self.addr && addr < self.addr + self.buckets).then(|| addr - self.addr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LevelRole {
    Top,
    Bottom,
    /// New top level while a resize is in progress.
    Resize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    /// log2 of the bottom-level bucket count.
    pub level_exp: u64,
    pub top: u64,
    pub bottom: u64,
    /// Address of the level being filled by a resize, or 0.
    pub resize: u64,
    pub seeds: [u64; 2],
}

impl Header {
    pub fn bottom_buckets(&self) -> u64 {
        1 << self.level_exp
    }

    pub fn level(&self, role: LevelRole) -> Option<Level> {
        let n = self.bottom_buckets();
        match role {
            LevelRole::Top => Some(Level {
                addr: self.top,
                buckets: 2 * n,
            }),
            LevelRole::Bottom => Some(Level {
                addr: self.bottom,
                buckets: n,
            }),
            LevelRole::Resize => (self.resize != 0).then_some(Level {
                addr: self.resize,
                buckets: 4 * n,
            }),
        }
    }

    pub fn levels(&self) -> impl Iterator<Item = (LevelRole, Level)> + '_ {
        [LevelRole::Top, LevelRole::Bottom, LevelRole::Resize]
            .into_iter()
            .filter_map(|r| self.level(r).map(|l| (r, l)))
    }

    pub fn encode(&self) -> [u8; 64] {
        let mut line = [0u8; 64];
        let fields = [
            (OFF_MAGIC, MAGIC),
            (OFF_LEVEL_EXP, self.level_exp),
            (OFF_TOP, self.top),
            (OFF_BOTTOM, self.bottom),
            (OFF_RESIZE, self.resize),
            (OFF_SEED1, self.seeds[0]),
            (OFF_SEED2, self.seeds[1]),
        ];
        for (off, v) in fields {
            line[off as usize..off as usize + 8].copy_from_slice(&v.to_le_bytes());
        }
        line
    }
}

/// Read access to 64-byte lines; absent lines read as zero.
pub trait ByteView {
    fn line(&self, base: u64) -> Option<&[u8; 64]>;

    fn read_u8(&self, addr: u64) -> u8 {
        self.line(line_base(addr))
            .map_or(0, |l| l[(addr - line_base(addr)) as usize])
    }

    /// `addr` must be 8-byte aligned.
    fn read_u64(&self, addr: u64) -> u64 {
        debug_assert_eq!(addr % 8, 0);
        self.line(line_base(addr)).map_or(0, |l| {
            let off = (addr - line_base(addr)) as usize;
            u64::from_le_bytes(l[off..off + 8].try_into().expect("8 bytes"))
        })
    }
}

impl ByteView for BTreeMap<u64, [u8; 64]> {
    fn line(&self, base: u64) -> Option<&[u8; 64]> {
        self.get(&base)
    }
}

impl ByteView for HashMap<u64, [u8; 64]> {
    fn line(&self, base: u64) -> Option<&[u8; 64]> {
        self.get(&base)
    }
}

/// Program-order view of a machine (every store applied).
pub struct CacheView<'a>(pub &'a MachineState);

impl ByteView for CacheView<'_> {
    fn line(&self, base: u64) -> Option<&[u8; 64]> {
        self.0.line(base).map(|l| &l.cache_content)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorruptLayout;

/// `Ok(None)` for a header line that was never written.
pub fn decode_header(view: &impl ByteView) -> Result<Option<Header>, CorruptLayout> {
    let Some(line) = view.line(HEADER_ADDR) else {
        return Ok(None);
    };
    if line.iter().all(|&b| b == 0) {
        return Ok(None);
    }
    let field = |off: u64| view.read_u64(HEADER_ADDR + off);
    if field(OFF_MAGIC) != MAGIC {
        return Err(CorruptLayout);
    }
    let header = Header {
        level_exp: field(OFF_LEVEL_EXP),
        top: field(OFF_TOP),
        bottom: field(OFF_BOTTOM),
        resize: field(OFF_RESIZE),
        seeds: [field(OFF_SEED1), field(OFF_SEED2)],
    };
    let heap_start = HEAP_BASE + HEADER_BYTES;
    let heap_end = HEAP_BASE + HEAP_SIZE;
    if header.level_exp > MAX_LEVEL_EXP || header.seeds.iter().any(|s| s % 2 == 0) {
        return Err(CorruptLayout);
    }
    for (_, level) in header.levels() {
        let end = level.addr.checked_add(Level::footprint(level.buckets));
        if level.addr < heap_start
            || level.addr % CACHE_LINE != 0
            || end.is_none_or(|e| e > heap_end)
        {
            return Err(CorruptLayout);
        }
    }
    Ok(Some(header))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotEntry {
    pub role: LevelRole,
    pub bucket: u64,
    pub slot: usize,
    pub key: u64,
    pub value: u64,
}

/// Every slot whose token bit is set, level by level.
pub fn occupied_slots(view: &impl ByteView, header: &Header) -> Vec<SlotEntry> {
    let mut out = Vec::new();
    for (role, level) in header.levels() {
        let token_lines = Level::token_bytes(level.buckets) / CACHE_LINE;
        for tl in 0..token_lines {
            let Some(tokens) = view.line(level.addr + tl * CACHE_LINE) else {
                continue;
            };
            for (i, &token) in tokens.iter().enumerate() {
                let bucket = tl * CACHE_LINE + i as u64;
                if token == 0 || bucket >= level.buckets {
                    continue;
                }
                for slot in 0..SLOTS_PER_BUCKET {
                    if token & (1 << slot) != 0 {
                        let addr = level.slot_addr(bucket, slot);
                        out.push(SlotEntry {
                            role,
                            bucket,
                            slot,
                            key: view.read_u64(addr),
                            value: view.read_u64(addr + 8),
                        });
                    }
                }
            }
        }
    }
    out
}

/// Live key/value pairs visible through `view`; the first copy of a key wins.
pub fn decode_items(view: &impl ByteView) -> BTreeMap<u64, u64> {
    let Ok(Some(header)) = decode_header(view) else {
        return BTreeMap::new();
    };
    let mut items = BTreeMap::new();
    for e in occupied_slots(view, &header) {
        items.entry(e.key).or_insert(e.value);
    }
    items
}
