//! Trace maintenance: accumulation fidelity, merge accounting, and bounded resident state.

use std::collections::BTreeMap;

use rand::Rng;
use shared_arrangements::collection::InputSession;
use shared_arrangements::data::Diff;
use shared_arrangements::dataflow::{execute, Config};
use shared_arrangements::error::DataflowError;
use shared_arrangements::lattice::{Antichain, Shape, Time};
use shared_arrangements::trace::{BatchBuilder, Cursor, Effort, Spine, INSERT_FUEL};

use super::case_rng;

type Update = ((u64, u64), u64, Diff);

fn frontier(e: u64) -> Antichain {
    Antichain::from_elem(Time::Scalar(e))
}

/// Inserts one batch per epoch, advancing `since` to `lag` epochs behind the upper, and checks
/// every readable time against brute force after each insertion.
pub fn check_fidelity(epochs: &[Vec<((u64, u64), Diff)>], lag: u64, effort: Effort) -> Result<(), String> {
    let mut spine: Spine<u64, u64> = Spine::new(Shape::Scalar, effort);
    let mut raw: Vec<Update> = Vec::new();
    for (e, updates) in epochs.iter().enumerate() {
        let e = e as u64;
        let mut builder = BatchBuilder::new();
        for ((k, v), r) in updates {
            builder.push(*k, *v, Time::Scalar(e), *r);
            raw.push(((*k, *v), e, *r));
        }
        let batch = builder.seal(frontier(e), frontier(e + 1)).map_err(|x| x.to_string())?;
        spine.insert(batch).map_err(|x| x.to_string())?;
        if e + 1 > lag {
            spine.set_since(frontier(e + 1 - lag)).map_err(|x| x.to_string())?;
        }
        for b in spine.batches() {
            b.check_invariants().map_err(|m| format!("after epoch {}: {}", e, m))?;
        }
        let since = spine.since().elements()[0].epoch();
        for t in since..=e {
            let mut expected: BTreeMap<(u64, u64), Diff> = BTreeMap::new();
            for (d, _, r) in raw.iter().filter(|u| u.1 <= t) {
                *expected.entry(*d).or_default() += r;
            }
            expected.retain(|_, r| *r != 0);
            let mut got: BTreeMap<(u64, u64), Diff> = BTreeMap::new();
            let mut cursor = spine.cursor();
            while cursor.key_valid() {
                while cursor.val_valid() {
                    let d = (*cursor.key(), *cursor.val());
                    cursor.map_times(|time, r| {
                        if time.less_equal(&Time::Scalar(t)) {
                            *got.entry(d).or_default() += r;
                        }
                    });
                    cursor.step_val();
                }
                cursor.step_key();
            }
            got.retain(|_, r| *r != 0);
            if let Some((d, g, x)) = crate::oracle::first_difference(&got, &expected) {
                return Err(format!(
                    "accumulation at time {} (since {}, effort {:?}): record {:?} has count {} but the inputs sum to {}",
                    t, since, effort, d, g, x
                ));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MergeAccounting {
    pub inserts: u64,
    pub max_excess: i64,
    pub max_live_batches: usize,
    pub total_work: u64,
    pub total_updates: u64,
}

/// Inserts `inserts` batches of comparable random sizes at the default effort, checking after
/// every insertion that its merge work is at most `effort * len + INSERT_FUEL` and that the
/// live batch count is at most `2 log2(n) + 8`.
pub fn merge_accounting(inserts: u64, seed: u64) -> Result<MergeAccounting, String> {
    let effort = Effort::default();
    let factor = effort.factor().expect("default effort is finite");
    let mut rng = case_rng(seed, 0);
    let mut spine: Spine<u64, ()> = Spine::new(Shape::Scalar, effort);
    let mut report = MergeAccounting::default();
    let mut next_key = 0u64;
    for e in 0..inserts {
        let len = rng.gen_range(50..=100);
        let mut builder = BatchBuilder::new();
        for _ in 0..len {
            builder.push(next_key, (), Time::Scalar(e), 1);
            next_key += 1;
        }
        spine.insert(builder.seal(frontier(e), frontier(e + 1)).map_err(|x| x.to_string())?).map_err(|x| x.to_string())?;
        let stats = spine.stats();
        let work = stats.last_insert_work.get();
        let excess = work as i64 - (factor * len) as i64;
        if work > factor * len + INSERT_FUEL {
            return Err(format!("insert {} of {} updates performed {} units of merge work", e, len, work));
        }
        let live = spine.live_batches();
        let bound = 2.0 * ((e + 1) as f64).log2() + 8.0;
        if live as f64 > bound {
            return Err(format!("{} live batches after {} inserts exceeds {:.1}", live, e + 1, bound));
        }
        report.inserts += 1;
        report.max_excess = report.max_excess.max(excess);
        report.max_live_batches = report.max_live_batches.max(live);
        report.total_updates += len;
        report.total_work = stats.merge_work.get();
    }
    Ok(report)
}

/// Streams `updates` insert and delete updates over `keys` keys through an arrangement, in
/// epochs of `keys` updates, advancing the reader's `since` after each epoch. Returns the
/// largest resident update count observed.
pub fn cancellation(updates: u64, keys: u64, workers: usize, seed: u64) -> Result<usize, DataflowError> {
    let per_epoch = keys.max(1);
    let maxima = execute(Config::workers(workers), |worker| {
        let (index, peers) = (worker.index(), worker.peers());
        let (mut input, mut trace, probe) = worker.dataflow(|scope| {
            let (input, keys) = InputSession::<u64>::new(scope);
            let arranged = keys.arrange_by_self();
            let probe = arranged.stream.probe();
            (input, arranged.trace, probe)
        })?;
        let stats = trace.stats();
        let mut rng = case_rng(seed, 0);
        let mut present = vec![false; keys as usize];
        let mut sent = 0;
        let mut epoch = 0;
        let mut max_resident = 0;
        while sent < updates {
            let n = per_epoch.min(updates - sent);
            for i in 0..n {
                let k = rng.gen_range(0..keys);
                let diff = if present[k as usize] { -1 } else { 1 };
                present[k as usize] = !present[k as usize];
                if (sent + i) as usize % peers == index {
                    input.update(k, diff)?;
                }
            }
            sent += n;
            epoch += 1;
            input.advance_to(epoch)?;
            worker.step_while(|| probe.less_than(&Time::Scalar(epoch)))?;
            trace.set_since(frontier(epoch))?;
            max_resident = max_resident.max(stats.max_resident_updates.get());
        }
        input.close()?;
        Ok(max_resident)
    })?;
    Ok(maxima.into_iter().sum())
}

pub fn run(seed: u64, iterations: usize) -> (usize, Option<String>) {
    for i in 0..iterations {
        let mut rng = case_rng(seed, i);
        let epochs = rng.gen_range(1..40);
        let keys = rng.gen_range(1..16);
        let batches: Vec<Vec<((u64, u64), Diff)>> = (0..epochs)
            .map(|_| {
                let n = rng.gen_range(0..30);
                (0..n).map(|_| ((rng.gen_range(0..keys), rng.gen_range(0..4)), rng.gen_range(-2..=2))).collect()
            })
            .collect();
        let lag = rng.gen_range(0..5);
        let effort = match rng.gen_range(0..3) {
            0 => Effort::Lazy,
            1 => Effort::default(),
            _ => Effort::Eager,
        };
        if let Err(m) = check_fidelity(&batches, lag, effort) {
            let (small, m) = super::shrink(batches.clone(), m, |b| check_fidelity(b, lag, effort).err());
            return (i + 1, Some(format!("{}\nminimal case: lag {}, batches {:?}", m, lag, small)));
        }
    }
    if iterations > 0 {
        if let Err(m) = merge_accounting(iterations as u64 * 10, seed) {
            return (iterations, Some(m));
        }
    }
    (iterations, None)
}
