use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("region {addr:#x}+{size} overlaps an earlier region")]
    OverlappingRegion { addr: u64, size: u64 },
    #[error("region {addr:#x}+{size} declared after an access to its range")]
    RegionAfterUse { addr: u64, size: u64 },
    #[error("store of {size} bytes at {addr:#x} straddles a cache line")]
    StraddlingStore { addr: u64, size: u64 },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StateError {
    #[error("event index {got} does not follow {last}")]
    NonMonotonicIndex { last: usize, got: usize },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CrashError {
    #[error("crash point {at} is beyond the trace end ({len})")]
    OutOfRange { at: usize, len: usize },
    #[error("{k} flush-pending lines at the crash point exceed the cap of {cap}")]
    TooManyPending { k: usize, cap: usize },
    #[error(transparent)]
    State(#[from] StateError),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LevelHashError {
    #[error("key {0:#x} is already present")]
    Duplicate(u64),
    #[error("key 0 is reserved for empty slots")]
    ReservedKey,
    #[error("no free slot for key {0:#x} after resizing")]
    TableFull(u64),
    #[error("no occupant of the bucket can be relocated")]
    NoRelocatableOccupant,
    #[error("unknown bug knob `{0}`")]
    UnknownKnob(String),
}

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error("invalid graph spec: {0}")]
    Graph(String),
    #[error("invalid Q-learning config: {0}")]
    Config(String),
    #[error("budget must be at least 1")]
    ZeroBudget,
    #[error(transparent)]
    LevelHash(#[from] LevelHashError),
}
