//! Crash-image recovery checking for level hashing.
//!
//! The expected state is derived from the trace alone. A key/value pair is
//! committed at crash point `c` when it was visible in program order at the
//! last fence before `c` and is still visible at `c` (so pairs deleted after
//! that fence are not required). Relocations transiently leave a key in two
//! token-set slots; a duplicate of the key being relocated is tolerated while
//! the crash point lies inside its relocation sequence.

use std::collections::{BTreeMap, HashMap};

use crate::crash_enum::{
    simulate, CrashImage, CrashPoints, CrashSimReport, RecoveryChecker, ReplayObserver, Verdict,
    ViolationKind,
};
use crate::error::CrashError;
use crate::pm_state::MachineState;
use crate::trace::{EventKind, Trace, TraceEvent};

use super::knob::base_site;
use super::layout::{decode_header, decode_items, occupied_slots, ByteView, CacheView};
use super::sites;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExpectedState {
    /// Pairs that must survive the crash.
    pub committed: BTreeMap<u64, u64>,
    /// Key whose relocation was in flight at the crash point.
    pub relocating: Option<u64>,
}

/// Recovery verdict for one durable image.
pub fn check_recovery(view: &impl ByteView, expected: &ExpectedState) -> Verdict {
    let header = match decode_header(view) {
        Err(_) => return Verdict::Violation(ViolationKind::CorruptLayout),
        Ok(None) if expected.committed.is_empty() => return Verdict::Consistent,
        Ok(None) => return Verdict::Violation(ViolationKind::LostKV),
        Ok(Some(h)) => h,
    };
    let slots = occupied_slots(view, &header);
    for e in &slots {
        let level = header.level(e.role).expect("decoded level");
        if e.key == 0 || !level.candidates(e.key, header.seeds).contains(&e.bucket) {
            return Verdict::Violation(ViolationKind::GarbageSlot);
        }
    }
    let mut seen: HashMap<u64, u64> = HashMap::with_capacity(slots.len());
    for e in &slots {
        if seen.insert(e.key, e.value).is_some() && expected.relocating != Some(e.key) {
            return Verdict::Violation(ViolationKind::DuplicateKV);
        }
    }
    let lost = expected
        .committed
        .iter()
        .any(|(k, v)| !slots.iter().any(|e| e.key == *k && e.value == *v));
    if lost {
        return Verdict::Violation(ViolationKind::LostKV);
    }
    Verdict::Consistent
}

/// Replay observer recording fence-time snapshots and relocation windows.
#[derive(Debug, Clone, Default)]
pub struct CommitTracker {
    at_last_fence: BTreeMap<u64, u64>,
    relocating: Option<u64>,
}

impl CommitTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Expected state for a crash with `machine` holding the applied prefix.
    pub fn expected(&self, machine: &MachineState) -> ExpectedState {
        let now = decode_items(&CacheView(machine));
        let committed = self
            .at_last_fence
            .iter()
            .filter(|(k, v)| now.get(k) == Some(v))
            .map(|(&k, &v)| (k, v))
            .collect();
        ExpectedState {
            committed,
            relocating: self.relocating,
        }
    }

    /// Key whose destination token is set by `event`, a token-byte store.
    fn relocated_key(event: &TraceEvent, machine: &MachineState) -> Option<u64> {
        let EventKind::Store { addr, value } = &event.kind else {
            return None;
        };
        let view = CacheView(machine);
        let header = decode_header(&view).ok()??;
        let (level, bucket) = header
            .levels()
            .find_map(|(_, l)| l.bucket_of_token(*addr).map(|b| (l, b)))?;
        let new_bits = value.first()? & !view.read_u8(*addr);
        let slot = new_bits.trailing_zeros() as usize;
        (slot < 8).then(|| view.read_u64(level.slot_addr(bucket, slot)))
    }
}

impl ReplayObserver for CommitTracker {
    fn observe(&mut self, event: &TraceEvent, machine_before: &MachineState) {
        if event.kind == EventKind::Fence {
            self.at_last_fence = decode_items(&CacheView(machine_before));
        }
        let site = base_site(&event.site);
        if site == sites::RELOC_TOKEN_STORE {
            self.relocating = Self::relocated_key(event, machine_before);
        } else if !sites::RELOCATION_WINDOW.contains(&site) {
            self.relocating = None;
        }
    }
}

/// [`RecoveryChecker`] bound to the expected state of one crash point.
#[derive(Debug, Clone)]
pub struct LevelHashChecker {
    pub expected: ExpectedState,
}

impl RecoveryChecker for LevelHashChecker {
    fn check(&self, image: &CrashImage) -> Verdict {
        check_recovery(&image.image, &self.expected)
    }
}

/// Enumerates and checks every image at each crash point of a table trace.
pub fn crash_sweep(
    trace: &Trace,
    points: &CrashPoints,
    cap: usize,
) -> Result<Vec<CrashSimReport>, CrashError> {
    let mut tracker = CommitTracker::new();
    simulate(trace, points, cap, &mut tracker, |t, machine, _| {
        LevelHashChecker {
            expected: t.expected(machine),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crash_enum::DEFAULT_PENDING_CAP;
    use crate::levelhash::{BugKnob, KnobKind, LevelTable, TableConfig};

    fn violations(reports: &[CrashSimReport]) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for r in reports {
            for i in r.violations() {
                *out.entry(i.verdict.clone()).or_insert(0) += 1;
            }
        }
        out
    }

    fn sweep(table: LevelTable) -> BTreeMap<String, usize> {
        let trace = table.into_trace();
        violations(&crash_sweep(&trace, &CrashPoints::EveryFence, DEFAULT_PENDING_CAP).unwrap())
    }

    #[test]
    fn fresh_image_is_consistent() {
        let empty = BTreeMap::new();
        assert_eq!(
            check_recovery(&empty, &ExpectedState::default()),
            Verdict::Consistent
        );
    }

    #[test]
    fn bug_free_inserts_and_deletes_survive_every_crash() {
        let mut t = LevelTable::new(&TableConfig {
            initial_exp: 0,
            ..TableConfig::default()
        });
        for k in 1..40u64 {
            t.insert(k * 0x9e37, k).unwrap();
            if k % 5 == 0 {
                t.delete((k - 2) * 0x9e37);
            }
        }
        assert!(t.stats().resizes > 0);
        assert!(sweep(t).is_empty());
    }

    #[test]
    fn missing_value_persist_exposes_garbage() {
        let mut t = LevelTable::new(&TableConfig {
            knobs: vec![BugKnob::new(KnobKind::MissingFenceTokenValue)],
            ..TableConfig::default()
        });
        t.insert(77, 1).unwrap();
        let v = sweep(t);
        assert!(v.contains_key("GarbageSlot"), "{v:?}");
    }

    #[test]
    fn duplicate_on_move_exposes_duplicate() {
        let mut t = LevelTable::new(&TableConfig {
            knobs: vec![BugKnob::new(KnobKind::DuplicateOnMove)],
            ..TableConfig::default()
        });
        let top = t.level(crate::levelhash::LevelRole::Top);
        let keys: Vec<u64> = (1u64..)
            .filter(|&k| top.candidates(k, t.header().seeds) == [0, 1])
            .take(4)
            .collect();
        for &k in &keys {
            t.insert(k, k).unwrap();
        }
        t.one_step_movement(crate::levelhash::LevelRole::Top, 0)
            .unwrap();
        // One more fenced op so a crash point lies past the movement.
        t.insert(u64::MAX, 3).unwrap();
        let v = sweep(t);
        assert!(v.contains_key("DuplicateKV"), "{v:?}");
    }
}
