//! Benchmark and demo workloads driven by the CLI and the acceptance suite.

pub mod arrange;
pub mod graph;
pub mod join;
pub mod tc;

use std::ops::Range;
use std::time::Duration;


/// Length of one input epoch, and the granularity of latency measurements.
pub const EPOCH: Duration = Duration::from_millis(1);

/// Open-loop schedule: event `i` is due at `i / rate` seconds after the start, independent of
/// how quickly the system responds.
#[derive(Clone, Copy, Debug)]
pub struct Schedule {
    pub rate: u64,
}

impl Schedule {
    /// Indices of events due during epoch `e`, which covers `[e, e + 1)` milliseconds.
    pub fn due(&self, epoch: u64) -> Range<u64> {
        let at = |e: u64| ((e as u128 * self.rate as u128).div_ceil(1000)) as u64;
        at(epoch)..at(epoch + 1)
    }

    /// Events due during the first `epochs` epochs.
    pub fn total(&self, epochs: u64) -> u64 {
        self.due(epochs).start
    }
}

pub fn nanos(d: Duration) -> u64 {
    d.as_nanos().min(u64::MAX as u128) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_partitions_events() {
        let s = Schedule { rate: 2500 };
        assert_eq!(s.due(0), 0..3);
        assert_eq!(s.due(1), 3..5);
        assert_eq!(s.total(1000), 2500);
        let zero = Schedule { rate: 0 };
        assert!(zero.due(7).is_empty());
        let mut covered = 0;
        for e in 0..1000 {
            let r = s.due(e);
            assert_eq!(r.start, covered);
            covered = r.end;
        }
        assert_eq!(covered, 2500);
    }
}
