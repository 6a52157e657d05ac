//! Per-cache-line persistence state machine.
//!
//! Stores land in the cache (`Dirty`), a flush moves a dirty line into the
//! write-pending queue (`FlushPending`), and a fence drains every pending line
//! into the persistence domain (`Clean`). Lines that are dirty but not flushed
//! survive a fence untouched. Initial memory is all zero.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::Serialize;

use crate::error::StateError;
use crate::trace::{line_base, EventKind, RegionTable, TraceEvent, CACHE_LINE};

const LINE: usize = CACHE_LINE as usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum LineStatus {
    Clean,
    Dirty,
    FlushPending,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineState {
    pub line_base: u64,
    pub status: LineStatus,
    /// Bit `i` set when byte `i` was stored since the line was last persisted.
    pub dirty_bytes: u64,
    pub cache_content: [u8; LINE],
    pub persisted_content: [u8; LINE],
    pub last_mod_event: Option<usize>,
    pub last_flush_event: Option<usize>,
    pub last_persist_event: Option<usize>,
    /// A flush has covered the latest modification of this line.
    flushed_since_mod: bool,
    /// Store events whose bytes are not yet durable, oldest first.
    unpersisted_stores: Vec<usize>,
}

impl LineState {
    fn new(line_base: u64) -> Self {
        Self {
            line_base,
            status: LineStatus::Clean,
            dirty_bytes: 0,
            cache_content: [0; LINE],
            persisted_content: [0; LINE],
            last_mod_event: None,
            last_flush_event: None,
            last_persist_event: None,
            flushed_since_mod: false,
            unpersisted_stores: Vec::new(),
        }
    }

    pub fn unpersisted_stores(&self) -> &[usize] {
        &self.unpersisted_stores
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum SignalKind {
    /// Flush of a line that is already flushed since its last modification.
    DuplicateFlush,
    /// Flush of a line with no modification since it was last clean.
    FlushUntouched,
    /// Fence with an empty write-pending set.
    EmptyFence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleSignal {
    pub kind: SignalKind,
    pub event: usize,
    pub line: Option<u64>,
}

/// Replay state over all cache lines.
///
/// A machine built with [`MachineState::scoped`] only tracks lines that
/// overlap a persistent region; stores and flushes elsewhere are ignored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MachineState {
    lines: BTreeMap<u64, LineState>,
    pending_set: BTreeSet<u64>,
    pub fence_count: usize,
    pub store_count: usize,
    pub flush_count: usize,
    last_index: Option<usize>,
    scope: Option<Arc<RegionTable>>,
}

impl MachineState {
    /// Tracks every address.
    pub fn new() -> Self {
        Self::default()
    }

    /// Tracks only lines inside persistent regions.
    pub fn scoped(regions: &RegionTable) -> Self {
        Self {
            scope: Some(Arc::new(regions.clone())),
            ..Self::default()
        }
    }

    fn tracks(&self, line: u64) -> bool {
        self.scope
            .as_ref()
            .is_none_or(|regions| regions.is_persistent_line(line))
    }

    pub fn lines(&self) -> impl Iterator<Item = &LineState> {
        self.lines.values()
    }

    pub fn line(&self, base: u64) -> Option<&LineState> {
        self.lines.get(&base)
    }

    /// Lines flushed but not yet fenced, in address order.
    pub fn pending_set(&self) -> &BTreeSet<u64> {
        &self.pending_set
    }

    /// Number of lines holding non-durable data (dirty or flush-pending).
    pub fn pm_pending(&self) -> usize {
        self.lines
            .values()
            .filter(|l| l.status != LineStatus::Clean)
            .count()
    }

    pub fn last_index(&self) -> Option<usize> {
        self.last_index
    }

    pub fn apply_event(&mut self, event: &TraceEvent) -> Result<Vec<OracleSignal>, StateError> {
        if let Some(last) = self.last_index {
            if event.index <= last {
                return Err(StateError::NonMonotonicIndex {
                    last,
                    got: event.index,
                });
            }
        }
        self.last_index = Some(event.index);
        let mut signals = Vec::new();
        match &event.kind {
            EventKind::Store { addr, value } => self.store(event.index, *addr, value),
            EventKind::Flush { addr, .. } => {
                if let Some(kind) = self.flush(event.index, line_base(*addr)) {
                    signals.push(OracleSignal {
                        kind,
                        event: event.index,
                        line: Some(line_base(*addr)),
                    });
                }
            }
            EventKind::Fence => {
                if !self.fence(event.index) {
                    signals.push(OracleSignal {
                        kind: SignalKind::EmptyFence,
                        event: event.index,
                        line: None,
                    });
                }
            }
            EventKind::Region { .. } | EventKind::VolatileHint { .. } | EventKind::Crash => {}
        }
        Ok(signals)
    }

    fn store(&mut self, index: usize, addr: u64, value: &[u8]) {
        let base = line_base(addr);
        if !self.tracks(base) {
            return;
        }
        self.store_count += 1;
        let offset = (addr - base) as usize;
        let line = self
            .lines
            .entry(base)
            .or_insert_with(|| LineState::new(base));
        line.cache_content[offset..offset + value.len()].copy_from_slice(value);
        for i in offset..offset + value.len() {
            line.dirty_bytes |= 1 << i;
        }
        if line.status == LineStatus::FlushPending {
            self.pending_set.remove(&base);
        }
        line.status = LineStatus::Dirty;
        line.flushed_since_mod = false;
        line.last_mod_event = Some(index);
        line.unpersisted_stores.push(index);
    }

    fn flush(&mut self, index: usize, base: u64) -> Option<SignalKind> {
        if !self.tracks(base) {
            return None;
        }
        self.flush_count += 1;
        let line = self
            .lines
            .entry(base)
            .or_insert_with(|| LineState::new(base));
        match line.status {
            LineStatus::Dirty => {
                line.status = LineStatus::FlushPending;
                line.last_flush_event = Some(index);
                line.flushed_since_mod = true;
                self.pending_set.insert(base);
                None
            }
            LineStatus::FlushPending => Some(SignalKind::DuplicateFlush),
            LineStatus::Clean if line.flushed_since_mod => Some(SignalKind::DuplicateFlush),
            LineStatus::Clean => Some(SignalKind::FlushUntouched),
        }
    }

    /// Drains the pending set. Returns false when it was empty.
    fn fence(&mut self, index: usize) -> bool {
        self.fence_count += 1;
        if self.pending_set.is_empty() {
            return false;
        }
        for base in std::mem::take(&mut self.pending_set) {
            let line = self.lines.get_mut(&base).expect("pending line is tracked");
            line.persisted_content = line.cache_content;
            line.dirty_bytes = 0;
            line.status = LineStatus::Clean;
            line.last_persist_event = Some(index);
            line.unpersisted_stores.clear();
        }
        true
    }

    /// Durable content of every touched line. Dirty and pending lines show
    /// their last persisted bytes.
    pub fn persisted_view(&self) -> BTreeMap<u64, [u8; LINE]> {
        self.lines
            .iter()
            .map(|(&base, l)| (base, l.persisted_content))
            .collect()
    }

    /// Program-order content of every touched line (what a load would see).
    pub fn cache_view(&self) -> BTreeMap<u64, [u8; LINE]> {
        self.lines
            .iter()
            .map(|(&base, l)| (base, l.cache_content))
            .collect()
    }
}

/// Replays a whole event list from a fresh machine.
pub fn replay(
    events: &[TraceEvent],
    regions: Option<&RegionTable>,
) -> Result<MachineState, StateError> {
    let mut machine = regions.map_or_else(MachineState::new, MachineState::scoped);
    for e in events {
        machine.apply_event(e)?;
    }
    Ok(machine)
}
