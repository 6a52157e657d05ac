//! Trace-based persistent-memory crash-consistency analysis.
//!
//! The crate replays PM traces (stores, cache-line flushes and fences)
//! through a per-line persistence state machine, classifies persistence
//! bugs, enumerates the memory images a crash could leave behind, and ships a
//! level hashing workload with seeded bugs plus an exploration harness that
//! compares state-selection policies.

pub mod crash_enum;
pub mod error;
pub mod explorer;
pub mod levelhash;
pub mod oracles;
pub mod pm_state;
pub mod trace;

pub use crash_enum::{
    check_images, enumerate_crash_images, CrashImage, CrashPoints, CrashSimReport, RecoveryChecker,
    Verdict, ViolationKind,
};
pub use error::{CrashError, ExploreError, LevelHashError, StateError, TraceError};
pub use oracles::{check_trace, summarize, BugClass, BugReport, CheckOutcome, Summary};
pub use pm_state::{LineState, LineStatus, MachineState, OracleSignal, SignalKind};
pub use trace::{
    parse_trace, write_trace, EventKind, FlushKind, RegionTable, Trace, TraceBuilder, TraceEvent,
    CACHE_LINE,
};
