//! Trace vocabulary and the line-delimited JSON trace format.
//!
//! A trace is a flat list of PM-relevant program actions. Each line of a
//! trace file is one JSON object whose `kind` selects the record layout:
//!
//! ```text
//! {"kind":"region","addr":65536,"size":4096,"persistent":true}
//! {"kind":"store","addr":65536,"size":8,"value":"2a00000000000000","site":"a.c:10"}
//! {"kind":"flush","addr":65536,"flush_kind":"clwb","site":"a.c:11"}
//! {"kind":"fence","site":"a.c:12"}
//! ```
//!
//! Stores larger than eight bytes that cross a cache-line boundary are split
//! into line-aligned pieces at parse time. Every piece keeps the original site.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::TraceError;

/// Cache line size in bytes. Fixed for every module.
pub const CACHE_LINE: u64 = 64;

/// Base address of the cache line containing `addr`.
#[inline]
pub fn line_base(addr: u64) -> u64 {
    addr & !(CACHE_LINE - 1)
}

/// Cache lines overlapped by `[addr, addr + size)`.
pub fn lines_covering(addr: u64, size: u64) -> impl Iterator<Item = u64> {
    let first = line_base(addr);
    let last = if size == 0 {
        first
    } else {
        line_base(addr + size - 1)
    };
    (first..=last).step_by(CACHE_LINE as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlushKind {
    Clwb,
    Clflushopt,
    Clflush,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    /// `value.len()` is the store size.
    Store {
        addr: u64,
        value: Vec<u8>,
    },
    Flush {
        addr: u64,
        flush_kind: FlushKind,
    },
    Fence,
    Region {
        addr: u64,
        size: u64,
        persistent: bool,
    },
    VolatileHint {
        addr: u64,
        size: u64,
    },
    /// Candidate crash point.
    Crash,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Store { .. } => "store",
            EventKind::Flush { .. } => "flush",
            EventKind::Fence => "fence",
            EventKind::Region { .. } => "region",
            EventKind::VolatileHint { .. } => "volatile_hint",
            EventKind::Crash => "crash",
        }
    }

    /// True for the instructions the oracles reason about.
    pub fn is_pm_instruction(&self) -> bool {
        matches!(
            self,
            EventKind::Store { .. } | EventKind::Flush { .. } | EventKind::Fence
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub index: usize,
    pub kind: EventKind,
    /// Source site, e.g. `level_hashing.c:104`. Empty for bookkeeping records.
    pub site: String,
    pub tid: u32,
}

impl TraceEvent {
    /// Byte footprint of a store, or the line footprint of a flush.
    pub fn footprint(&self) -> Option<(u64, u64)> {
        match &self.kind {
            EventKind::Store { addr, value } => Some((*addr, value.len() as u64)),
            EventKind::Flush { addr, .. } => Some((line_base(*addr), CACHE_LINE)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Region {
    pub base: u64,
    pub size: u64,
    pub persistent: bool,
}

impl Region {
    fn end(&self) -> u64 {
        self.base + self.size
    }

    fn overlaps(&self, addr: u64, size: u64) -> bool {
        addr < self.end() && self.base < addr + size
    }
}

/// Address-space classification built from region and volatile-hint records.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RegionTable {
    ranges: Vec<Region>,
    volatile_hints: Vec<(u64, u64)>,
}

impl RegionTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Ranges ordered by base address.
    pub fn ranges(&self) -> &[Region] {
        &self.ranges
    }

    pub fn volatile_hints(&self) -> &[(u64, u64)] {
        &self.volatile_hints
    }

    /// Adds a range. Fails if it overlaps an existing one.
    pub fn insert(&mut self, region: Region) -> Result<(), TraceError> {
        if region.size == 0 {
            return Err(TraceError::Invalid(format!(
                "region at {:#x} has zero size",
                region.base
            )));
        }
        let pos = self.ranges.partition_point(|r| r.base < region.base);
        let clash = [pos.checked_sub(1), Some(pos)]
            .into_iter()
            .flatten()
            .filter_map(|i| self.ranges.get(i))
            .any(|r| r.overlaps(region.base, region.size));
        if clash {
            return Err(TraceError::OverlappingRegion {
                addr: region.base,
                size: region.size,
            });
        }
        self.ranges.insert(pos, region);
        Ok(())
    }

    pub fn add_volatile_hint(&mut self, addr: u64, size: u64) {
        self.volatile_hints.push((addr, size));
    }

    /// The range containing `addr`, if any.
    pub fn lookup(&self, addr: u64) -> Option<&Region> {
        let pos = self.ranges.partition_point(|r| r.base <= addr);
        let candidate = self.ranges.get(pos.checked_sub(1)?)?;
        (addr < candidate.end()).then_some(candidate)
    }

    /// A line is persistent when any byte of it lies in a persistent range.
    pub fn is_persistent_line(&self, line: u64) -> bool {
        self.ranges
            .iter()
            .any(|r| r.persistent && r.overlaps(line, CACHE_LINE))
    }

    pub fn intersects_volatile_hint(&self, addr: u64, size: u64) -> bool {
        self.volatile_hints
            .iter()
            .any(|&(base, len)| addr < base + len && base < addr + size)
    }
}

/// A validated trace: events with dense indices plus the derived region table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
    pub regions: RegionTable,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Incremental trace construction with validation and store splitting.
#[derive(Debug, Clone, Default)]
pub struct TraceBuilder {
    trace: Trace,
    // Store/flush footprints seen so far, used to reject late region records.
    touched: Vec<(u64, u64)>,
}

impl TraceBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.trace.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trace.events.is_empty()
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.trace.events
    }

    pub fn regions(&self) -> &RegionTable {
        &self.trace.regions
    }

    /// Validates and appends one record. Returns the number of events added
    /// (more than one when a store is split).
    pub fn push(&mut self, kind: EventKind, site: &str, tid: u32) -> Result<usize, TraceError> {
        match kind {
            EventKind::Store { addr, value } => self.push_store(addr, value, site, tid),
            EventKind::Region {
                addr,
                size,
                persistent,
            } => {
                self.check_not_touched(addr, size)?;
                self.trace.regions.insert(Region {
                    base: addr,
                    size,
                    persistent,
                })?;
                self.append(
                    EventKind::Region {
                        addr,
                        size,
                        persistent,
                    },
                    site,
                    tid,
                );
                Ok(1)
            }
            EventKind::VolatileHint { addr, size } => {
                if size == 0 {
                    return Err(TraceError::Invalid(format!(
                        "volatile hint at {addr:#x} has zero size"
                    )));
                }
                self.trace.regions.add_volatile_hint(addr, size);
                self.append(EventKind::VolatileHint { addr, size }, site, tid);
                Ok(1)
            }
            EventKind::Flush { addr, flush_kind } => {
                self.touched.push((line_base(addr), CACHE_LINE));
                self.append(EventKind::Flush { addr, flush_kind }, site, tid);
                Ok(1)
            }
            other => {
                self.append(other, site, tid);
                Ok(1)
            }
        }
    }

    pub fn store(&mut self, addr: u64, value: &[u8], site: &str) -> Result<usize, TraceError> {
        self.push_store(addr, value.to_vec(), site, 0)
    }

    pub fn flush(&mut self, addr: u64, site: &str) {
        self.touched.push((line_base(addr), CACHE_LINE));
        self.append(
            EventKind::Flush {
                addr,
                flush_kind: FlushKind::Clwb,
            },
            site,
            0,
        );
    }

    pub fn fence(&mut self, site: &str) {
        self.append(EventKind::Fence, site, 0);
    }

    pub fn finish(self) -> Trace {
        self.trace
    }

    fn push_store(
        &mut self,
        addr: u64,
        value: Vec<u8>,
        site: &str,
        tid: u32,
    ) -> Result<usize, TraceError> {
        let size = value.len() as u64;
        if size == 0 {
            return Err(TraceError::Invalid(format!(
                "store at {addr:#x} has zero size"
            )));
        }
        let end = addr
            .checked_add(size)
            .ok_or_else(|| TraceError::Invalid(format!("store at {addr:#x} overflows")))?;
        let crosses = line_base(addr) != line_base(end - 1);
        if !crosses {
            if size <= 8 && !size.is_power_of_two() {
                return Err(TraceError::Invalid(format!(
                    "store of {size} bytes at {addr:#x}: small stores must be 1, 2, 4 or 8 bytes"
                )));
            }
            self.touched.push((addr, size));
            self.append(EventKind::Store { addr, value }, site, tid);
            return Ok(1);
        }
        if size <= 8 {
            return Err(TraceError::StraddlingStore { addr, size });
        }
        let mut pieces = 0;
        let mut cursor = addr;
        let mut rest = value.as_slice();
        while !rest.is_empty() {
            let room = (line_base(cursor) + CACHE_LINE - cursor) as usize;
            let take = room.min(rest.len());
            let (head, tail) = rest.split_at(take);
            self.touched.push((cursor, take as u64));
            self.append(
                EventKind::Store {
                    addr: cursor,
                    value: head.to_vec(),
                },
                site,
                tid,
            );
            cursor += take as u64;
            rest = tail;
            pieces += 1;
        }
        Ok(pieces)
    }

    fn check_not_touched(&self, addr: u64, size: u64) -> Result<(), TraceError> {
        if self
            .touched
            .iter()
            .any(|&(a, s)| a < addr + size && addr < a + s)
        {
            return Err(TraceError::RegionAfterUse { addr, size });
        }
        Ok(())
    }

    fn append(&mut self, kind: EventKind, site: &str, tid: u32) {
        let index = self.trace.events.len();
        self.trace.events.push(TraceEvent {
            index,
            kind,
            site: site.to_owned(),
            tid,
        });
    }
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

/// On-disk record. Field order here fixes the serialized key order.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum Record {
    Store {
        addr: u64,
        size: u64,
        value: String,
        site: String,
        #[serde(default, skip_serializing_if = "is_zero")]
        tid: u32,
    },
    Flush {
        addr: u64,
        flush_kind: FlushKind,
        site: String,
        #[serde(default, skip_serializing_if = "is_zero")]
        tid: u32,
    },
    Fence {
        site: String,
        #[serde(default, skip_serializing_if = "is_zero")]
        tid: u32,
    },
    Region {
        addr: u64,
        size: u64,
        persistent: bool,
    },
    VolatileHint {
        addr: u64,
        size: u64,
    },
    Crash {
        #[serde(default, skip_serializing_if = "String::is_empty")]
        site: String,
    },
}

impl Record {
    fn into_parts(self) -> Result<(EventKind, String, u32), String> {
        Ok(match self {
            Record::Store {
                addr,
                size,
                value,
                site,
                tid,
            } => {
                if value.len() as u64 != 2 * size {
                    return Err(format!(
                        "store value has {} hex chars, expected {}",
                        value.len(),
                        2 * size
                    ));
                }
                let value = hex::decode(&value).map_err(|e| format!("bad store value: {e}"))?;
                (EventKind::Store { addr, value }, site, tid)
            }
            Record::Flush {
                addr,
                flush_kind,
                site,
                tid,
            } => (EventKind::Flush { addr, flush_kind }, site, tid),
            Record::Fence { site, tid } => (EventKind::Fence, site, tid),
            Record::Region {
                addr,
                size,
                persistent,
            } => (
                EventKind::Region {
                    addr,
                    size,
                    persistent,
                },
                String::new(),
                0,
            ),
            Record::VolatileHint { addr, size } => {
                (EventKind::VolatileHint { addr, size }, String::new(), 0)
            }
            Record::Crash { site } => (EventKind::Crash, site, 0),
        })
    }

    fn from_event(event: &TraceEvent) -> Record {
        let site = event.site.clone();
        let tid = event.tid;
        match &event.kind {
            EventKind::Store { addr, value } => Record::Store {
                addr: *addr,
                size: value.len() as u64,
                value: hex::encode(value),
                site,
                tid,
            },
            EventKind::Flush { addr, flush_kind } => Record::Flush {
                addr: *addr,
                flush_kind: *flush_kind,
                site,
                tid,
            },
            EventKind::Fence => Record::Fence { site, tid },
            EventKind::Region {
                addr,
                size,
                persistent,
            } => Record::Region {
                addr: *addr,
                size: *size,
                persistent: *persistent,
            },
            EventKind::VolatileHint { addr, size } => Record::VolatileHint {
                addr: *addr,
                size: *size,
            },
            EventKind::Crash => Record::Crash { site },
        }
    }
}

/// Parses a line-delimited JSON trace. Blank lines are skipped; line numbers
/// in errors are 1-based.
pub fn parse_trace<R: BufRead>(reader: R) -> Result<Trace, TraceError> {
    let mut builder = TraceBuilder::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| TraceError::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let (kind, site, tid) = record
            .into_parts()
            .map_err(|msg| TraceError::Parse { line: lineno, msg })?;
        builder
            .push(kind, &site, tid)
            .map_err(|e| TraceError::Parse {
                line: lineno,
                msg: e.to_string(),
            })?;
    }
    Ok(builder.finish())
}

pub fn parse_trace_str(text: &str) -> Result<Trace, TraceError> {
    parse_trace(text.as_bytes())
}

/// Writes one JSON object per event.
pub fn write_trace<W: Write>(trace: &Trace, mut out: W) -> Result<(), TraceError> {
    for event in &trace.events {
        serde_json::to_writer(&mut out, &Record::from_event(event))
            .map_err(|e| TraceError::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_trace_string(trace: &Trace) -> String {
    let mut buf = Vec::new();
    write_trace(trace, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("trace output is UTF-8")
}
