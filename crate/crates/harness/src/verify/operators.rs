//! Oracle equivalence: operator outputs against brute-force recomputation at every completed
//! epoch.

use std::collections::BTreeSet;

use shared_arrangements::collection::{Collection, InputSession};
use shared_arrangements::data::{Data, Diff};
use shared_arrangements::dataflow::{execute, Config, Faults};
use shared_arrangements::error::DataflowError;
use shared_arrangements::lattice::{Antichain, Time};
use shared_arrangements::trace::consolidate;

use super::{case_rng, random_stream, shrink};
use crate::oracle::{self, Multiset};

pub type Record = (u64, u64);
pub type Update = (Record, u64, Diff);

/// Sources of the reachability computation; records `(k, v)` are read as edges `k -> v`.
pub const SOURCES: [u64; 3] = [0, 1, 2];

#[derive(Clone, Copy, Debug)]
pub struct Limits {
    pub max_updates: usize,
    pub max_keys: u64,
    pub max_vals: u64,
    pub max_epochs: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_updates: 10_000, max_keys: 64, max_vals: 16, max_epochs: 32 }
    }
}

/// Updates observed at one operator's output, per worker, with the output length at the
/// moment each epoch completed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Observed<D> {
    pub per_worker: Vec<(Vec<(D, Time, Diff)>, Vec<usize>)>,
}

impl<D: Data> Observed<D> {
    /// Accumulation at `epoch` of everything emitted before `epoch` completed.
    pub fn at(&self, epoch: u64) -> Multiset<D> {
        let mut all = Vec::new();
        for (updates, marks) in self.per_worker.iter() {
            all.extend_from_slice(&updates[..marks[epoch as usize]]);
        }
        oracle::accumulate(&all, &Time::Scalar(epoch))
    }

    /// Every emitted update, consolidated without compaction.
    pub fn consolidated(&self) -> Vec<(D, Time, Diff)> {
        let all = self.per_worker.iter().flat_map(|(u, _)| u.iter().cloned()).collect();
        consolidate(all, &Antichain::new()).expect("diffs fit in 64 bits")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Outputs {
    pub count: Observed<(u64, Diff)>,
    pub distinct: Observed<Record>,
    pub join: Observed<(u64, (u64, u64))>,
    pub min: Observed<Record>,
    pub reach: Observed<Record>,
}

/// The five computations under test, over one input collection.
fn build(input: &Collection<Record>, sources: &Collection<u64>) -> [Collection<Record>; 5] {
    let arranged = input.arrange_by_key();
    let count = arranged.count().as_collection(|k, c| (*k, *c as u64));
    let distinct = arranged.distinct().as_collection(|k, v| (*k, *v));
    // Join the even-valued records with the odd-valued ones; pack the value pair.
    let evens = input.filter(|(_, v)| v % 2 == 0).arrange_by_key();
    let odds = input.filter(|(_, v)| v % 2 == 1).arrange_by_key();
    let join = evens.join(&odds).map(|(k, (a, b))| (k, a << 32 | b));
    let min = arranged.min().as_collection(|k, v| (*k, *v));
    let edges = arranged.distinct().as_collection(|k, v| (*k, *v));
    let reach = crate::workloads::tc::reach(&edges, sources);
    [count, distinct, join, min, reach]
}

pub fn run_case(updates: &[Update], epochs: u64, config: Config) -> Result<Outputs, DataflowError> {
    let per_worker = execute(config, |worker| {
        let (index, peers) = (worker.index(), worker.peers());
        let (mut input, mut src, captures, probes) = worker.dataflow(|scope| {
            let (input, collection) = InputSession::<Record>::new(scope);
            let (src, sources) = InputSession::<u64>::new(scope);
            let outs = build(&collection, &sources);
            let captures: Vec<_> = outs.iter().map(|c| c.capture()).collect();
            let probes: Vec<_> = outs.iter().map(|c| c.probe()).collect();
            (input, src, captures, probes)
        })?;
        if index == 0 {
            for s in SOURCES {
                src.insert(s)?;
            }
        }
        src.close()?;
        let mut marks: Vec<Vec<usize>> = vec![Vec::new(); captures.len()];
        let mut next = 0;
        for e in 0..epochs {
            while next < updates.len() && updates[next].1 == e {
                if next % peers == index {
                    input.update(updates[next].0, updates[next].2)?;
                }
                next += 1;
            }
            input.advance_to(e + 1)?;
            worker.step_while(|| probes.iter().any(|p| p.less_equal(&Time::Scalar(e))))?;
            for (m, c) in marks.iter_mut().zip(captures.iter()) {
                m.push(c.borrow().len());
            }
        }
        input.close()?;
        worker.step_while(|| probes.iter().any(|p| !p.done()))?;
        let outs: Vec<(Vec<(Record, Time, Diff)>, Vec<usize>)> =
            captures.iter().zip(marks).map(|(c, m)| (c.borrow().clone(), m)).collect();
        Ok(outs)
    })?;
    let mut outputs = Outputs::default();
    for mut outs in per_worker {
        let reach = outs.pop().expect("five outputs");
        let min = outs.pop().expect("five outputs");
        let join = outs.pop().expect("five outputs");
        let distinct = outs.pop().expect("five outputs");
        let count = outs.pop().expect("five outputs");
        outputs.count.per_worker.push(retype(count, |(k, c)| (k, c as Diff)));
        outputs.distinct.per_worker.push(distinct);
        outputs.join.per_worker.push(retype(join, |(k, p)| (k, (p >> 32, p & 0xFFFF_FFFF))));
        outputs.min.per_worker.push(min);
        outputs.reach.per_worker.push(reach);
    }
    Ok(outputs)
}

fn retype<D, E>(observed: (Vec<(D, Time, Diff)>, Vec<usize>), f: impl Fn(D) -> E) -> (Vec<(E, Time, Diff)>, Vec<usize>) {
    (observed.0.into_iter().map(|(d, t, r)| (f(d), t, r)).collect(), observed.1)
}

fn compare<D: Data>(name: &str, epoch: u64, got: &Multiset<D>, expected: &Multiset<D>) -> Result<(), String> {
    match oracle::first_difference(got, expected) {
        None => Ok(()),
        Some((d, g, x)) => Err(format!("{} at epoch {}: record {:?} has count {} but brute force gives {}", name, epoch, d, g, x)),
    }
}

/// Checks every operator output at every completed epoch.
pub fn check(updates: &[Update], epochs: u64, config: Config) -> Result<Outputs, String> {
    let outputs = run_case(updates, epochs, config).map_err(|e| format!("dataflow failed: {}", e))?;
    let raw: Vec<(Record, Time, Diff)> = updates.iter().map(|(d, e, r)| (*d, Time::Scalar(*e), *r)).collect();
    let sources: BTreeSet<u64> = SOURCES.into_iter().collect();
    for e in 0..epochs {
        let input = oracle::accumulate(&raw, &Time::Scalar(e));
        compare("count", e, &outputs.count.at(e), &oracle::count(&input))?;
        compare("distinct", e, &outputs.distinct.at(e), &oracle::distinct(&input))?;
        let evens: Multiset<Record> = input.iter().filter(|((_, v), _)| v % 2 == 0).map(|(d, r)| (*d, *r)).collect();
        let odds: Multiset<Record> = input.iter().filter(|((_, v), _)| v % 2 == 1).map(|(d, r)| (*d, *r)).collect();
        compare("join", e, &outputs.join.at(e), &oracle::join(&evens, &odds))?;
        compare("min", e, &outputs.min.at(e), &oracle::min(&input))?;
        compare("iterate", e, &outputs.reach.at(e), &oracle::reach(&input, &sources))?;
    }
    Ok(outputs)
}

pub fn config(workers: usize, faults: &Faults) -> Config {
    Config { workers, faults: faults.clone(), ..Config::default() }
}

pub fn run(seed: u64, iterations: usize, limits: Limits, workers: usize, faults: &Faults) -> (usize, Option<String>) {
    for i in 0..iterations {
        let mut rng = case_rng(seed, i);
        let (updates, epochs) = random_stream(&mut rng, limits.max_updates, limits.max_keys, limits.max_vals, limits.max_epochs);
        if let Err(m) = check(&updates, epochs, config(workers, faults)) {
            let (small, m) = shrink(updates, m, |u| check(u, epochs, config(workers, faults)).err());
            return (i + 1, Some(format!("case {}: {}\nminimal input ({} updates, {} epochs): {:?}", i, m, small.len(), epochs, small)));
        }
    }
    (iterations, None)
}
