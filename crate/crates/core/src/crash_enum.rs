//! Crash-image enumeration.
//!
//! At a crash point every fenced line is durable, every dirty line is lost,
//! and each flush-pending line may or may not have drained. With `k` pending
//! lines that gives `2^k` images, produced in binary counting order over the
//! pending lines sorted by address (bit `i` of the subset mask selects the
//! `i`-th line).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::CrashError;
use crate::pm_state::MachineState;
use crate::trace::{EventKind, Trace, TraceEvent};

pub const DEFAULT_PENDING_CAP: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrashImage {
    pub image: BTreeMap<u64, [u8; 64]>,
    /// Pending lines that drained in this image, ascending.
    pub included_pending: Vec<u64>,
    pub crash_event: usize,
}

/// All images reachable from `machine`'s state. `crash_event` is recorded
/// in each image; the machine must have applied exactly the events before it.
pub fn images_at(
    machine: &MachineState,
    crash_event: usize,
    cap: usize,
) -> Result<Vec<CrashImage>, CrashError> {
    let pending: Vec<u64> = machine.pending_set().iter().copied().collect();
    let k = pending.len();
    if k > cap {
        return Err(CrashError::TooManyPending { k, cap });
    }
    let base = machine.persisted_view();
    let images = (0u64..1 << k)
        .map(|mask| {
            let mut image = base.clone();
            let mut included = Vec::new();
            for (bit, &line) in pending.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    let content = machine.line(line).expect("pending line").cache_content;
                    image.insert(line, content);
                    included.push(line);
                }
            }
            CrashImage {
                image,
                included_pending: included,
                crash_event,
            }
        })
        .collect();
    Ok(images)
}

/// Replays `trace` up to (not including) `crash_event` and enumerates images.
pub fn enumerate_crash_images(
    trace: &Trace,
    crash_event: usize,
    cap: usize,
) -> Result<Vec<CrashImage>, CrashError> {
    if crash_event > trace.len() {
        return Err(CrashError::OutOfRange {
            at: crash_event,
            len: trace.len(),
        });
    }
    let mut machine = MachineState::scoped(&trace.regions);
    for e in &trace.events[..crash_event] {
        machine.apply_event(e)?;
    }
    images_at(&machine, crash_event, cap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViolationKind {
    GarbageSlot,
    DuplicateKV,
    LostKV,
    CorruptLayout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Consistent,
    Violation(ViolationKind),
}

impl Verdict {
    pub fn is_violation(self) -> bool {
        matches!(self, Verdict::Violation(_))
    }

    pub fn label(self) -> &'static str {
        match self {
            Verdict::Consistent => "Consistent",
            Verdict::Violation(ViolationKind::GarbageSlot) => "GarbageSlot",
            Verdict::Violation(ViolationKind::DuplicateKV) => "DuplicateKV",
            Verdict::Violation(ViolationKind::LostKV) => "LostKV",
            Verdict::Violation(ViolationKind::CorruptLayout) => "CorruptLayout",
        }
    }
}

/// Decides whether a crash image recovers to a consistent state.
pub trait RecoveryChecker: Sync {
    fn check(&self, image: &CrashImage) -> Verdict;

    /// Impure checkers are run sequentially.
    fn is_pure(&self) -> bool {
        true
    }
}

impl<F> RecoveryChecker for F
where
    F: Fn(&CrashImage) -> Verdict + Sync,
{
    fn check(&self, image: &CrashImage) -> Verdict {
        self(image)
    }
}

#[derive(Debug, Clone)]
pub struct CheckedImages {
    pub results: Vec<(CrashImage, Verdict)>,
    /// Count per verdict label.
    pub counts: BTreeMap<&'static str, usize>,
}

impl CheckedImages {
    pub fn violations(&self) -> usize {
        self.results
            .iter()
            .filter(|(_, v)| v.is_violation())
            .count()
    }
}

pub fn check_images<C: RecoveryChecker + ?Sized>(
    images: Vec<CrashImage>,
    checker: &C,
) -> CheckedImages {
    let verdicts: Vec<Verdict> = if checker.is_pure() {
        images.par_iter().map(|img| checker.check(img)).collect()
    } else {
        images.iter().map(|img| checker.check(img)).collect()
    };
    let mut counts = BTreeMap::new();
    for v in &verdicts {
        *counts.entry(v.label()).or_insert(0) += 1;
    }
    CheckedImages {
        results: images.into_iter().zip(verdicts).collect(),
        counts,
    }
}

/// Which crash points a simulation visits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CrashPoints {
    /// Explicit crash points (event indices; `len` means end of trace).
    At(Vec<usize>),
    /// Every `crash` record in the trace, or the end of the trace when
    /// there is none.
    Markers,
    /// Immediately before and after every fence.
    EveryFence,
}

impl CrashPoints {
    pub fn resolve(&self, events: &[TraceEvent]) -> Vec<usize> {
        let mut points: Vec<usize> = match self {
            CrashPoints::At(v) => v.clone(),
            CrashPoints::Markers => {
                let marks: Vec<usize> = events
                    .iter()
                    .filter(|e| e.kind == EventKind::Crash)
                    .map(|e| e.index)
                    .collect();
                if marks.is_empty() {
                    vec![events.len()]
                } else {
                    marks
                }
            }
            CrashPoints::EveryFence => events
                .iter()
                .filter(|e| e.kind == EventKind::Fence)
                .flat_map(|e| [e.index, e.index + 1])
                .collect(),
        };
        points.sort_unstable();
        points.dedup();
        points
    }
}

/// Sees every event just before the machine applies it.
pub trait ReplayObserver {
    fn observe(&mut self, event: &TraceEvent, machine_before: &MachineState);
}

impl ReplayObserver for () {
    fn observe(&mut self, _: &TraceEvent, _: &MachineState) {}
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub included_pending: Vec<u64>,
    pub verdict: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashSimReport {
    pub crash_event: usize,
    pub pending_k: usize,
    pub images: Vec<ImageEntry>,
}

impl CrashSimReport {
    pub fn violations(&self) -> impl Iterator<Item = &ImageEntry> {
        self.images.iter().filter(|i| i.verdict != "Consistent")
    }
}

/// Replays `trace` once, stopping at each crash point to enumerate and check
/// images. `make_checker` builds the checker for a crash point from the
/// observer and the machine state there.
pub fn simulate<O, C, F>(
    trace: &Trace,
    points: &CrashPoints,
    cap: usize,
    observer: &mut O,
    mut make_checker: F,
) -> Result<Vec<CrashSimReport>, CrashError>
where
    O: ReplayObserver,
    C: RecoveryChecker,
    F: FnMut(&O, &MachineState, usize) -> C,
{
    let points = points.resolve(&trace.events);
    if let Some(&last) = points.last() {
        if last > trace.len() {
            return Err(CrashError::OutOfRange {
                at: last,
                len: trace.len(),
            });
        }
    }
    let mut machine = MachineState::scoped(&trace.regions);
    let mut reports = Vec::with_capacity(points.len());
    let mut next = 0;
    for point in points {
        while next < point {
            let event = &trace.events[next];
            observer.observe(event, &machine);
            machine.apply_event(event)?;
            next += 1;
        }
        let checker = make_checker(observer, &machine, point);
        let images = images_at(&machine, point, cap)?;
        let pending_k = machine.pending_set().len();
        let checked = check_images(images, &checker);
        reports.push(CrashSimReport {
            crash_event: point,
            pending_k,
            images: checked
                .results
                .into_iter()
                .map(|(img, v)| ImageEntry {
                    included_pending: img.included_pending,
                    verdict: v.label().to_owned(),
                })
                .collect(),
        });
    }
    Ok(reports)
}
