#![allow(dead_code)]

use std::collections::BTreeMap;

use shared_arrangements::collection::{Collection, InputSession};
use shared_arrangements::data::{Data, Diff};
use shared_arrangements::dataflow::{execute, Config};
use shared_arrangements::lattice::{Antichain, Time};
use shared_arrangements::trace::consolidate;

/// Feeds `inputs` (record, epoch, diff) into a dataflow built by `build` on `config.workers`
/// workers and returns every output update, consolidated.
pub fn run_with<D, O, B>(config: Config, inputs: &[(D, u64, Diff)], build: B) -> Vec<(O, Time, Diff)>
where
    D: Data,
    O: Data,
    B: Fn(&Collection<D>) -> Collection<O> + Sync,
{
    let mut sorted = inputs.to_vec();
    sorted.sort_by_key(|x| x.1);
    let results = execute(config, |worker| {
        let index = worker.index();
        let peers = worker.peers();
        let (mut input, captured, probe) = worker.dataflow(|scope| {
            let (input, collection) = InputSession::new(scope);
            let out = build(&collection);
            (input, out.capture(), out.probe())
        })?;
        for (i, (d, epoch, diff)) in sorted.iter().enumerate() {
            if *epoch > input.epoch() {
                input.advance_to(*epoch)?;
                worker.step()?;
            }
            if i % peers == index {
                input.update_at(d.clone(), *epoch, *diff)?;
            }
        }
        input.close()?;
        worker.step_while(|| !probe.done())?;
        let out = captured.borrow().clone();
        Ok(out)
    })
    .expect("dataflow runs");
    consolidate(results.into_iter().flatten().collect(), &Antichain::new()).expect("no overflow")
}

pub fn run<D, O, B>(workers: usize, inputs: &[(D, u64, Diff)], build: B) -> Vec<(O, Time, Diff)>
where
    D: Data,
    O: Data,
    B: Fn(&Collection<D>) -> Collection<O> + Sync,
{
    run_with(Config::workers(workers), inputs, build)
}

/// The multiset of `updates` accumulated at `time`.
pub fn accumulate<D: Data>(updates: &[(D, Time, Diff)], time: &Time) -> BTreeMap<D, Diff> {
    let mut acc = BTreeMap::new();
    for (d, t, r) in updates {
        if t.less_equal(time) {
            *acc.entry(d.clone()).or_insert(0) += r;
        }
    }
    acc.retain(|_, r| *r != 0);
    acc
}

pub fn s(t: u64) -> Time {
    Time::Scalar(t)
}
