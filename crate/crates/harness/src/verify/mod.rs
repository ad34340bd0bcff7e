//! Randomized property suites, shared by `sharr verify` and the acceptance tests.

pub mod determinism;
pub mod lattice;
pub mod operators;
pub mod sharing;
pub mod trace;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shared_arrangements::data::Diff;
use shared_arrangements::dataflow::Faults;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Lattice,
    Trace,
    Sharing,
    Operators,
    Determinism,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Lattice, Suite::Trace, Suite::Sharing, Suite::Operators, Suite::Determinism];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Lattice => "lattice",
            Suite::Trace => "trace",
            Suite::Sharing => "sharing",
            Suite::Operators => "operators",
            Suite::Determinism => "determinism",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown suite {:?}; expected one of lattice, trace, sharing, operators, determinism", s))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Report {
    pub suite: Suite,
    pub seed: u64,
    pub cases: usize,
    /// The first counterexample found, after shrinking.
    pub failure: Option<String>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.failure {
            None => write!(f, "suite {} seed {}: {} cases passed", self.suite.name(), self.seed, self.cases),
            Some(m) => write!(f, "suite {} seed {}: FAILED after {} cases\n{}", self.suite.name(), self.seed, self.cases, m),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Options {
    pub workers: usize,
    pub faults: Faults,
}

pub fn run(suite: Suite, seed: u64, iterations: usize, options: &Options) -> Report {
    let workers = options.workers.max(1);
    let (cases, failure) = match suite {
        Suite::Lattice => lattice::run(seed, iterations),
        Suite::Trace => trace::run(seed, iterations),
        Suite::Sharing => sharing::run(seed, iterations, workers, &options.faults),
        Suite::Operators => operators::run(seed, iterations, operators::Limits::default(), workers, &options.faults),
        Suite::Determinism => determinism::run(seed, iterations),
    };
    Report { suite, seed, cases, failure }
}

/// A per-case generator derived from the suite seed, so each case can be replayed alone.
pub fn case_rng(seed: u64, case: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let salt: u64 = rng.gen();
    ChaCha8Rng::seed_from_u64(salt ^ (case as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// A random stream of `((key, val), epoch, diff)` updates in epoch order. Retractions remove
/// records inserted earlier, so multiplicities stay non-negative.
pub fn random_stream(rng: &mut ChaCha8Rng, max_updates: usize, max_keys: u64, max_vals: u64, max_epochs: u64) -> (Vec<((u64, u64), u64, Diff)>, u64) {
    let n = rng.gen_range(0..=max_updates);
    let keys = rng.gen_range(1..=max_keys);
    let epochs = rng.gen_range(1..=max_epochs);
    let mut times: Vec<u64> = (0..n).map(|_| rng.gen_range(0..epochs)).collect();
    times.sort_unstable();
    let mut live: Vec<(u64, u64)> = Vec::new();
    let mut updates = Vec::with_capacity(n);
    for t in times {
        if !live.is_empty() && rng.gen_bool(0.3) {
            let i = rng.gen_range(0..live.len());
            updates.push((live.swap_remove(i), t, -1));
        } else {
            let record = (rng.gen_range(0..keys), rng.gen_range(0..max_vals));
            let diff = if rng.gen_bool(0.1) { 2 } else { 1 };
            for _ in 0..diff {
                live.push(record);
            }
            updates.push((record, t, diff));
        }
    }
    (updates, epochs)
}

/// Greedily removes chunks of `case` while `fails` still reports a failure.
pub fn shrink<T: Clone>(mut case: Vec<T>, mut message: String, mut fails: impl FnMut(&[T]) -> Option<String>) -> (Vec<T>, String) {
    let mut chunk = case.len().div_ceil(2).max(1);
    let mut attempts = 0;
    loop {
        let mut start = 0;
        while start < case.len() && attempts < 400 {
            let end = (start + chunk).min(case.len());
            let mut candidate = case[..start].to_vec();
            candidate.extend_from_slice(&case[end..]);
            attempts += 1;
            match fails(&candidate) {
                Some(m) => {
                    case = candidate;
                    message = m;
                }
                None => start = end,
            }
        }
        if chunk == 1 || attempts >= 400 {
            break;
        }
        chunk = chunk.div_ceil(2);
    }
    (case, message)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shrink_finds_small_witness() {
        let case: Vec<u32> = (0..100).collect();
        let (small, msg) = shrink(case, "x".into(), |c| c.contains(&37).then(|| format!("{} items", c.len())));
        assert_eq!(small, vec![37]);
        assert_eq!(msg, "1 items");
    }

    #[test]
    fn streams_are_seeded_and_non_negative() {
        let a = random_stream(&mut case_rng(5, 0), 500, 8, 4, 10);
        let b = random_stream(&mut case_rng(5, 0), 500, 8, 4, 10);
        assert_eq!(a, b);
        let mut counts = std::collections::BTreeMap::new();
        for (d, _, r) in a.0.iter() {
            *counts.entry(*d).or_insert(0) += r;
            assert!(counts[d] >= 0);
        }
        assert!(a.0.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("bogus".parse::<Suite>().is_err());
    }
}
