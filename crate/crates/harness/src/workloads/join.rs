//! `bench-join`: joining collections of varying size against a pre-existing arrangement.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shared_arrangements::collection::InputSession;
use shared_arrangements::dataflow::{execute, Config};
use shared_arrangements::error::DataflowError;
use shared_arrangements::lattice::{Antichain, Time};
use shared_arrangements::trace::consolidate;

#[derive(Clone, Debug)]
pub struct JoinConfig {
    pub workers: usize,
    /// Keys `0..arranged` are arranged up front.
    pub arranged: u64,
    pub batches: Vec<usize>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JoinRound {
    pub batch: usize,
    /// From installing the query dataflow until its output is complete.
    pub latency: Duration,
    pub cursor_advances: u64,
    pub outputs: u64,
    /// The query's consolidated output matched a brute-force join.
    pub correct: bool,
}

/// Query keys for a batch of size `m`: uniform over twice the arranged domain, so that about
/// half of them match.
pub fn query_keys(arranged: u64, m: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (m as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    (0..m).map(|_| rng.gen_range(0..arranged.saturating_mul(2).max(1))).collect()
}

pub fn bench_join(config: &JoinConfig) -> Result<Vec<JoinRound>, DataflowError> {
    let runtime = Config::workers(config.workers);
    let results = execute(runtime, |worker| {
        let (index, peers) = (worker.index(), worker.peers());
        let (mut input, trace, probe) = worker.dataflow(|scope| {
            let (input, keys) = InputSession::<u64>::new(scope);
            let arranged = keys.map(|k| (k, ())).arrange_named("Arranged");
            let probe = arranged.stream.probe();
            (input, arranged.trace, probe)
        })?;
        for k in (index as u64..config.arranged).step_by(peers) {
            input.insert(k)?;
        }
        input.advance_to(1)?;
        worker.step_while(|| probe.less_equal(&Time::Scalar(0)))?;

        let mut rounds = Vec::new();
        for &m in config.batches.iter() {
            let keys = query_keys(config.arranged, m, config.seed);
            let metrics = worker.metrics();
            let (advances0, outputs0) = (metrics.join_cursor_advances.get(), metrics.join_outputs.get());
            let start = Instant::now();
            let (mut query, captured, out_probe) = worker.dataflow(|scope| {
                let imported = trace.import(scope);
                let (query, keys) = InputSession::<u64>::new(scope);
                let out = keys.map(|k| (k, ())).arrange_by_key().join_core(&imported, |k, _, _| Some(*k));
                (query, out.capture(), out.probe())
            })?;
            for (i, k) in keys.iter().enumerate() {
                if i % peers == index {
                    query.insert(*k)?;
                }
            }
            query.close()?;
            worker.step_while(|| out_probe.less_equal(&Time::Scalar(0)))?;
            let latency = start.elapsed();
            let out = captured.borrow().clone();
            rounds.push((m, latency, metrics.join_cursor_advances.get() - advances0, metrics.join_outputs.get() - outputs0, out));
        }
        input.close()?;
        Ok(rounds)
    })?;

    let mut rounds = Vec::new();
    for (i, &m) in config.batches.iter().enumerate() {
        let mut latency = Duration::ZERO;
        let mut advances = 0;
        let mut outputs = 0;
        let mut all = Vec::new();
        for worker in results.iter() {
            let (_, l, a, o, out) = &worker[i];
            latency = latency.max(*l);
            advances += a;
            outputs += o;
            all.extend(out.iter().cloned());
        }
        let got = consolidate(all, &Antichain::new()).map_err(DataflowError::from)?;
        let expected_updates: Vec<(u64, Time, i64)> = query_keys(config.arranged, m, config.seed)
            .into_iter()
            .filter(|k| *k < config.arranged)
            .map(|k| (k, Time::Scalar(0), 1))
            .collect();
        let expected = consolidate(expected_updates, &Antichain::new()).map_err(DataflowError::from)?;
        rounds.push(JoinRound { batch: m, latency, cursor_advances: advances, outputs, correct: got == expected });
    }
    Ok(rounds)
}
