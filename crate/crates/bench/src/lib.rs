//! Inputs shared by the benchmarks.

use pmbugs::levelhash::{generate_workload, WorkloadConfig};
use pmbugs::Trace;

/// Bug-free level hashing trace of `ops` operations.
pub fn workload_trace(ops: usize, seed: u64) -> Trace {
    generate_workload(&WorkloadConfig {
        ops,
        seed,
        ..WorkloadConfig::default()
    })
    .expect("bug-free workloads never fail")
    .trace
}

/// Trace of the bundled fixture recipe.
pub fn table1_trace() -> Trace {
    generate_workload(&WorkloadConfig::table1())
        .expect("fixture recipe is valid")
        .trace
}
