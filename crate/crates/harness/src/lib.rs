//! Workloads, benchmarks and verification suites for shared arrangements.

pub mod edges;
pub mod latency;
pub mod oracle;
pub mod output;
pub mod verify;
pub mod workloads;
