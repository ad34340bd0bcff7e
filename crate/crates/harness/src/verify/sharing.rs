//! Shared arrangements against private ones: reads through handles, imports, and outputs of
//! operators reusing one arrangement.

use std::collections::BTreeMap;

use shared_arrangements::arrange::Arranged;
use shared_arrangements::collection::{Collection, InputSession};
use shared_arrangements::data::{route_hash, Diff};
use shared_arrangements::dataflow::{execute, Config, Faults};
use shared_arrangements::error::DataflowError;
use shared_arrangements::lattice::{Antichain, Time};
use shared_arrangements::trace::{consolidate, Cursor};

use super::operators::{Record, Update};
use super::{case_rng, random_stream, shrink};
use crate::oracle::{self, Multiset};

type Out = (u64, u64, u64);

/// Count, a self-join and a filtered count, all reading `arranged`.
fn consumers(arranged: &Arranged<u64, u64>) -> [Collection<Out>; 3] {
    let count = arranged.count().as_collection(|k, c| (0, *k, *c as u64));
    let join = arranged.join_core(arranged, |k, a, b| Some((*k, *a, *b)));
    let filtered = arranged.filter(|_, v| v % 2 == 0).count().as_collection(|k, c| (1, *k, *c as u64));
    [count, join, filtered]
}

#[derive(Default)]
struct Observed {
    shared: Vec<Vec<(Out, Time, Diff)>>,
    private: Vec<Vec<(Out, Time, Diff)>>,
    imported: Vec<Vec<(Out, Time, Diff)>>,
    /// Per epoch, `read_accumulation` results through the lagging and the current handle.
    reads: Vec<(Vec<(Record, Diff)>, Vec<(Record, Diff)>)>,
    problems: Vec<String>,
}

fn read_all(trace: &shared_arrangements::arrange::TraceHandle<u64, u64>, time: &Time) -> Result<Vec<(Record, Diff)>, String> {
    let mut out = Vec::new();
    let mut cursor = trace.cursor();
    while cursor.key_valid() {
        let k = *cursor.key();
        for (v, r) in trace.read_accumulation(&k, time).map_err(|e| e.to_string())? {
            out.push(((k, v), r));
        }
        cursor.step_key();
    }
    Ok(out)
}

fn run_case(updates: &[Update], epochs: u64, config: Config) -> Result<Observed, DataflowError> {
    let import_at = epochs / 2;
    let results = execute(config, |worker| {
        let (index, peers) = (worker.index(), worker.peers());
        let mut problems = Vec::new();
        let (mut input, trace, shared_caps, probes) = worker.dataflow(|scope| {
            let (input, data) = InputSession::<Record>::new(scope);
            let arranged = data.arrange_named("Shared");
            let outs = consumers(&arranged);
            let caps: Vec<_> = outs.iter().map(|c| c.capture()).collect();
            let mut probes: Vec<_> = outs.iter().map(|c| c.probe()).collect();
            probes.push(arranged.stream.probe());
            (input, arranged.trace, caps, probes)
        })?;
        let (mut private_input, private_caps, private_probes) = worker.dataflow(|scope| {
            let (input, data) = InputSession::<Record>::new(scope);
            // Each consumer builds its own arrangement of the same data.
            let count = data.arrange_by_key().count().as_collection(|k, c| (0, *k, *c as u64));
            let join = data.arrange_by_key().join_core(&data.arrange_by_key(), |k, a, b| Some((*k, *a, *b)));
            let filtered = data.filter(|(_, v)| v % 2 == 0).arrange_by_key().count().as_collection(|k, c| (1, *k, *c as u64));
            let outs = [count, join, filtered];
            let caps: Vec<_> = outs.iter().map(|c| c.capture()).collect();
            let probes: Vec<_> = outs.iter().map(|c| c.probe()).collect();
            (input, caps, probes)
        })?;
        let mut lagging = trace.clone();
        let mut current = trace.clone();
        drop(trace);
        let mut imported = None;
        let mut reads = Vec::new();
        let mut next = 0;
        for e in 0..epochs {
            if e == import_at {
                let (caps, probes) = worker.dataflow(|scope| {
                    let outs = consumers(&current.import(scope));
                    let caps: Vec<_> = outs.iter().map(|c| c.capture()).collect();
                    let probes: Vec<_> = outs.iter().map(|c| c.probe()).collect();
                    (caps, probes)
                })?;
                imported = Some((caps, probes));
            }
            while next < updates.len() && updates[next].1 == e {
                if next % peers == index {
                    input.update(updates[next].0, updates[next].2)?;
                    private_input.update(updates[next].0, updates[next].2)?;
                }
                next += 1;
            }
            input.advance_to(e + 1)?;
            private_input.advance_to(e + 1)?;
            let t = Time::Scalar(e);
            worker.step_while(|| probes.iter().chain(private_probes.iter()).any(|p| p.less_equal(&t)))?;
            if let Some((_, probes)) = imported.as_ref() {
                worker.step_while(|| probes.iter().any(|p| p.less_equal(&t)))?;
            }

            // `current` compacts right up to the completed epoch, `lagging` two epochs behind.
            let lag = Time::Scalar(e.saturating_sub(2));
            lagging.set_since(Antichain::from_elem(lag))?;
            current.set_since(Antichain::from_elem(t))?;
            match (read_all(&lagging, &lag), read_all(&current, &t)) {
                (Ok(a), Ok(b)) => reads.push((a, b)),
                (Err(m), _) | (_, Err(m)) => problems.push(format!("read at epoch {}: {}", e, m)),
            }
            for b in current.batches() {
                if let Err(m) = b.check_invariants() {
                    problems.push(format!("shared trace batch on worker {} after epoch {}: {}", index, e, m));
                }
            }
            if current.stats().writers.get() != 1 {
                problems.push(format!("shared trace has {} writers", current.stats().writers.get()));
            }
        }
        input.close()?;
        private_input.close()?;
        drop((lagging, current));
        worker.step_while(|| probes.iter().chain(private_probes.iter()).any(|p| !p.done()))?;
        if let Some((_, probes)) = imported.as_ref() {
            worker.step_while(|| probes.iter().any(|p| !p.done()))?;
        }
        let flatten = |caps: &[shared_arrangements::collection::Captured<Out>]| -> Vec<(Out, Time, Diff)> {
            caps.iter().flat_map(|c| c.borrow().clone()).collect()
        };
        let imported_out = imported.as_ref().map(|(c, _)| flatten(c)).unwrap_or_default();
        Ok((flatten(&shared_caps), flatten(&private_caps), imported_out, reads, problems))
    })?;
    let mut observed = Observed::default();
    for (s, p, i, reads, problems) in results {
        observed.shared.push(s);
        observed.private.push(p);
        observed.imported.push(i);
        if observed.reads.is_empty() {
            observed.reads = vec![(Vec::new(), Vec::new()); reads.len()];
        }
        for (acc, (a, b)) in observed.reads.iter_mut().zip(reads) {
            acc.0.extend(a);
            acc.1.extend(b);
        }
        observed.problems.extend(problems);
    }
    Ok(observed)
}

fn accumulate_at(updates: &[Vec<(Out, Time, Diff)>], time: &Time) -> Multiset<Out> {
    let all: Vec<_> = updates.iter().flatten().cloned().collect();
    oracle::accumulate(&all, time)
}

pub fn check(updates: &[Update], epochs: u64, config: Config) -> Result<(), String> {
    let workers = config.workers;
    let observed = run_case(updates, epochs, config).map_err(|e| format!("dataflow failed: {}", e))?;
    if let Some(p) = observed.problems.first() {
        return Err(p.clone());
    }
    let all = |v: &[Vec<(Out, Time, Diff)>]| consolidate(v.iter().flatten().cloned().collect(), &Antichain::new()).expect("no overflow");
    let (shared, private) = (all(&observed.shared), all(&observed.private));
    if shared != private {
        let s: BTreeMap<_, _> = shared.iter().map(|(d, t, r)| ((*d, *t), *r)).collect();
        let p: BTreeMap<_, _> = private.iter().map(|(d, t, r)| ((*d, *t), *r)).collect();
        let (w, a, b) = oracle::first_difference(&s, &p).expect("outputs differ");
        return Err(format!("shared and private outputs differ at record {:?} time {}: {} vs {}", w.0, w.1, a, b));
    }
    let raw: Vec<(Record, Time, Diff)> = updates.iter().map(|(d, e, r)| (*d, Time::Scalar(*e), *r)).collect();
    for e in 0..epochs {
        let t = Time::Scalar(e);
        if e >= epochs / 2 {
            let fresh = accumulate_at(&observed.private, &t);
            let imported = accumulate_at(&observed.imported, &t);
            if let Some((d, a, b)) = oracle::first_difference(&imported, &fresh) {
                return Err(format!("imported output at epoch {} has {:?} with count {} but a fresh arrangement gives {}", e, d, a, b));
            }
        }
        let (lagging, current) = &observed.reads[e as usize];
        for (name, reads, at) in [("lagging", lagging, e.saturating_sub(2)), ("current", current, e)] {
            let got: Multiset<Record> = reads.iter().cloned().collect();
            let expected = oracle::accumulate(&raw, &Time::Scalar(at));
            if let Some((d, g, x)) = oracle::first_difference(&got, &expected) {
                let shard = route_hash(&d.0) % workers as u64;
                return Err(format!(
                    "read through the {} handle at time {} after epoch {}: key {} (worker {}) value {} has count {} but the input accumulates to {}",
                    name, at, e, d.0, shard, d.1, g, x
                ));
            }
        }
    }
    Ok(())
}

pub fn run(seed: u64, iterations: usize, workers: usize, faults: &Faults) -> (usize, Option<String>) {
    let config = || Config { workers, faults: faults.clone(), ..Config::default() };
    for i in 0..iterations {
        let mut rng = case_rng(seed, i);
        let (updates, epochs) = random_stream(&mut rng, 2_000, 32, 8, 16);
        if let Err(m) = check(&updates, epochs, config()) {
            let (small, m) = shrink(updates, m, |u| check(u, epochs, config()).err());
            return (i + 1, Some(format!("case {}: {}\nminimal input ({} updates, {} epochs): {:?}", i, m, small.len(), epochs, small)));
        }
    }
    (iterations, None)
}
