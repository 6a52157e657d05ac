//! Level hashing on a simulated persistent heap.
//!
//! Two levels of 4-slot buckets: the top level has twice as many buckets as
//! the bottom one, and a key may live in either of its two hash buckets on
//! each level. Every table mutation is emitted as a PM trace, so the
//! workload can be fed to the oracles and to crash enumeration.

pub mod knob;
pub mod layout;
pub mod recovery;
mod table;
pub mod workload;

pub use knob::{BugKnob, KnobKind};
pub use layout::{ByteView, Header, Level, LevelRole};
pub use recovery::{check_recovery, crash_sweep, CommitTracker, ExpectedState, LevelHashChecker};
pub use table::{LevelTable, ResizeStats, TableConfig, TableStats};
pub use workload::{generate_workload, Op, OpGenerator, OpResult, Workload, WorkloadConfig};

/// Instruction sites of the table code. Seeded bugs add `#<n>` variants.
pub mod sites {
    pub const INIT_HEADER_STORE: &str = "level_hashing.c:58";
    pub const HEADER_FLUSH: &str = "level_hashing.c:71";
    pub const HEADER_FENCE: &str = "level_hashing.c:72";

    pub const SLOT_STORE: &str = "level_hashing.c:118";
    pub const SLOT_FLUSH: &str = "level_hashing.c:119";
    pub const SLOT_FENCE: &str = "level_hashing.c:120";

    pub const INSERT_TOKEN_STORE: &str = "level_hashing.c:171";
    pub const INSERT_TOKEN_FLUSH: &str = "level_hashing.c:172";
    pub const INSERT_TOKEN_FENCE: &str = "level_hashing.c:173";
    pub const EXTRA_FENCE: &str = "level_hashing.c:176";

    pub const RELOC_TOKEN_STORE: &str = "level_hashing.c:214";
    pub const RELOC_TOKEN_FLUSH: &str = "level_hashing.c:215";
    pub const RELOC_TOKEN_FENCE: &str = "level_hashing.c:216";
    pub const RELOC_CLEAR_STORE: &str = "level_hashing.c:219";
    pub const RELOC_CLEAR_FLUSH: &str = "level_hashing.c:220";
    pub const RELOC_CLEAR_FENCE: &str = "level_hashing.c:221";

    pub const DELETE_TOKEN_STORE: &str = "level_hashing.c:305";
    pub const DELETE_TOKEN_FLUSH: &str = "level_hashing.c:306";
    pub const DELETE_TOKEN_FENCE: &str = "level_hashing.c:307";

    pub const RESIZE_BEGIN_STORE: &str = "level_hashing.c:412";
    pub const RESIZE_COMMIT_STORE: &str = "level_hashing.c:447";

    /// Sites between setting a relocated item's new token and the fence
    /// that clears its old one. A crash in this window may see both copies.
    pub const RELOCATION_WINDOW: [&str; 6] = [
        RELOC_TOKEN_STORE,
        RELOC_TOKEN_FLUSH,
        RELOC_TOKEN_FENCE,
        RELOC_CLEAR_STORE,
        RELOC_CLEAR_FLUSH,
        RELOC_CLEAR_FENCE,
    ];
}
