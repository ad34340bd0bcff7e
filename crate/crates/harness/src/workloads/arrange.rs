//! `bench-arrange`: an open-loop stream of key replacements, arranged and counted.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shared_arrangements::arrange::TraceHandle;
use shared_arrangements::collection::InputSession;
use shared_arrangements::data::Diff;
use shared_arrangements::dataflow::{execute, Config, ProbeHandle, Scope, Worker};
use shared_arrangements::error::DataflowError;
use shared_arrangements::lattice::{Antichain, Time};
use shared_arrangements::trace::{Cursor, Effort};

use super::{nanos, Schedule, EPOCH};
use crate::latency::LatencyRecorder;

#[derive(Clone, Debug)]
pub struct ArrangeConfig {
    pub workers: usize,
    /// Size of the maintained collection.
    pub keys: usize,
    /// Offered updates per second. Each update replaces one key by a fresh random key.
    pub rate: u64,
    pub duration: Duration,
    pub effort: Effort,
    pub seed: u64,
}

impl Default for ArrangeConfig {
    fn default() -> Self {
        ArrangeConfig { workers: 1, keys: 10_000, rate: 100_000, duration: Duration::from_secs(1), effort: Effort::default(), seed: 0 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ArrangeReport {
    pub latency: LatencyRecorder,
    pub work: Vec<(String, u64)>,
    pub memory: Vec<(String, usize, usize)>,
    /// Final `(key, count)` contents of the maintained count, across workers.
    pub counts: Vec<(u64, Diff)>,
    pub offered: u64,
    pub achieved_rate: f64,
    pub saturated: bool,
}

/// The deterministic update stream: a ring of `keys` random keys, where update `i` replaces
/// the key in slot `i % keys`.
struct Generator {
    rng: ChaCha8Rng,
    ring: Vec<u64>,
    next: usize,
}

impl Generator {
    fn new(keys: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ring = (0..keys).map(|_| rng.gen()).collect();
        Generator { rng, ring, next: 0 }
    }

    /// Returns `(inserted, removed)`.
    fn replace(&mut self) -> (u64, u64) {
        let fresh = self.rng.gen();
        let slot = self.next % self.ring.len();
        self.next += 1;
        (fresh, std::mem::replace(&mut self.ring[slot], fresh))
    }
}

struct Handles {
    input: InputSession<u64>,
    probe: ProbeHandle,
    keys: TraceHandle<u64, ()>,
    counts: TraceHandle<u64, Diff>,
}

fn build(scope: &Scope) -> Handles {
    let (input, keys) = InputSession::<u64>::new(scope);
    let arranged = keys.map(|k| (k, ())).arrange_named("Keys");
    let counts = arranged.count();
    let probe = counts.stream.probe();
    Handles { input, probe, keys: arranged.trace, counts: counts.trace }
}

impl Handles {
    fn send(&mut self, gen: &mut Generator, events: std::ops::Range<u64>, index: usize, peers: usize) -> Result<(), DataflowError> {
        for i in events {
            let (fresh, old) = gen.replace();
            if i as usize % peers == index {
                self.input.insert(fresh)?;
                self.input.remove(old)?;
            }
        }
        Ok(())
    }

    fn advance(&mut self, epoch: u64) -> Result<(), DataflowError> {
        self.input.advance_to(epoch)?;
        let f = Antichain::from_elem(Time::Scalar(epoch));
        self.keys.set_since(f.clone())?;
        self.counts.set_since(f)?;
        Ok(())
    }

    fn preload(&mut self, worker: &mut Worker, gen: &Generator) -> Result<(), DataflowError> {
        let (index, peers) = (worker.index(), worker.peers());
        for (i, k) in gen.ring.iter().enumerate() {
            if i % peers == index {
                self.input.insert(*k)?;
            }
        }
        self.advance(1)?;
        let probe = self.probe.clone();
        worker.step_while(|| probe.less_equal(&Time::Scalar(0)))
    }

    fn final_counts(&self) -> Vec<(u64, Diff)> {
        let mut out = Vec::new();
        let mut cursor = self.counts.cursor();
        while cursor.key_valid() {
            while cursor.val_valid() {
                let mut sum = 0;
                cursor.map_times(|_, r| sum += r);
                for _ in 0..sum {
                    out.push((*cursor.key(), *cursor.val()));
                }
                cursor.step_val();
            }
            cursor.step_key();
        }
        out
    }
}

struct WorkerResult {
    latency: LatencyRecorder,
    work: Vec<(String, u64)>,
    memory: Vec<(String, usize, usize)>,
    counts: Vec<(u64, Diff)>,
    elapsed: Duration,
}

pub fn bench_arrange(config: &ArrangeConfig) -> Result<ArrangeReport, DataflowError> {
    if config.keys == 0 {
        return Err(DataflowError::Input("key domain must be non-empty".into()));
    }
    let runtime = Config { workers: config.workers, merge_effort: config.effort, ..Config::default() };
    let schedule = Schedule { rate: config.rate };
    let epochs = (config.duration.as_millis() as u64).max(1);
    let results = execute(runtime, |worker| {
        let (index, peers) = (worker.index(), worker.peers());
        let mut h = worker.dataflow(build)?;
        let mut gen = Generator::new(config.keys, config.seed);
        h.preload(worker, &gen)?;

        let mut latency = LatencyRecorder::new();
        let mut pending: std::collections::VecDeque<(u64, Instant)> = Default::default();
        let start = Instant::now();
        let mut last = start;
        let complete = |h: &Handles, pending: &mut std::collections::VecDeque<(u64, Instant)>, latency: &mut LatencyRecorder, last: &mut Instant| {
            while let Some(&(epoch, at)) = pending.front() {
                if h.probe.less_equal(&Time::Scalar(epoch)) {
                    break;
                }
                *last = Instant::now();
                latency.record("arrange", nanos(*last - at));
                pending.pop_front();
            }
        };
        // Epoch `e + 1` carries the events due during millisecond `e` and is sent when it ends.
        for e in 0..epochs {
            let due_at = start + EPOCH * (e as u32 + 1);
            while Instant::now() < due_at {
                worker.step()?;
                complete(&h, &mut pending, &mut latency, &mut last);
                if pending.is_empty() {
                    std::thread::yield_now();
                }
            }
            h.send(&mut gen, schedule.due(e), index, peers)?;
            h.advance(e + 2)?;
            pending.push_back((e + 1, due_at));
            worker.step()?;
            complete(&h, &mut pending, &mut latency, &mut last);
        }
        while let Some((epoch, at)) = pending.pop_front() {
            let probe = h.probe.clone();
            worker.step_while(|| probe.less_equal(&Time::Scalar(epoch)))?;
            last = Instant::now();
            latency.record("arrange", nanos(last - at));
        }
        let elapsed = last - start;
        h.input.close()?;
        let probe = h.probe.clone();
        worker.step_while(|| !probe.done())?;

        let stats = h.keys.stats();
        let amortized = stats.merge_work.get();
        let settle = h.keys.settle()?;
        let metrics = worker.metrics();
        let work = vec![
            ("inserts".to_string(), stats.inserts.get()),
            ("merge_work".to_string(), amortized),
            ("settle_work".to_string(), settle),
            ("total_merge_work".to_string(), amortized + settle),
            ("max_insert_work".to_string(), stats.max_insert_work.get()),
            ("max_insert_excess".to_string(), stats.max_insert_excess.get().max(0) as u64),
            ("merges_started".to_string(), stats.merges_started.get()),
            ("merges_completed".to_string(), stats.merges_completed.get()),
            ("max_live_batches".to_string(), stats.max_live_batches.get() as u64),
            ("max_resident_updates".to_string(), stats.max_resident_updates.get() as u64),
            ("reduce_evaluations".to_string(), metrics.reduce_evaluations.get()),
        ];
        let memory = vec![
            (format!("{}@{}", h.keys.name(), index), h.keys.resident_updates(), h.keys.live_batches()),
            (format!("{}@{}", h.counts.name(), index), h.counts.resident_updates(), h.counts.live_batches()),
        ];
        let counts = h.final_counts();
        Ok(WorkerResult { latency, work, memory, counts, elapsed })
    })?;

    let mut report = ArrangeReport { offered: schedule.total(epochs), ..Default::default() };
    let mut elapsed = Duration::ZERO;
    for r in results {
        report.latency.merge(r.latency);
        report.memory.extend(r.memory);
        report.counts.extend(r.counts);
        elapsed = elapsed.max(r.elapsed);
        for (name, v) in r.work {
            match report.work.iter_mut().find(|(n, _)| *n == name) {
                Some((_, total)) if name.starts_with("max_") => *total = (*total).max(v),
                Some((_, total)) => *total += v,
                None => report.work.push((name, v)),
            }
        }
    }
    report.counts.sort_unstable();
    let secs = elapsed.as_secs_f64().max(1e-9);
    report.achieved_rate = report.offered as f64 / secs;
    // The driver is open-loop; finishing well after the last event was due means it fell behind.
    report.saturated = config.rate > 0 && elapsed > config.duration.mul_f64(1.1) + Duration::from_millis(50);
    report.work.push(("offered_updates".to_string(), report.offered));
    report.work.push(("achieved_updates_per_sec".to_string(), report.achieved_rate as u64));
    report.work.push(("saturated".to_string(), report.saturated as u64));
    Ok(report)
}

/// Closed-loop throughput in updates per second: `updates` replacements in rounds of `batch`,
/// each round awaited before the next is sent.
pub fn arrange_throughput(workers: usize, keys: usize, updates: u64, batch: u64, seed: u64) -> Result<f64, DataflowError> {
    let runtime = Config::workers(workers);
    let batch = batch.max(1);
    let times = execute(runtime, |worker| {
        let (index, peers) = (worker.index(), worker.peers());
        let mut h = worker.dataflow(build)?;
        let mut gen = Generator::new(keys.max(1), seed);
        h.preload(worker, &gen)?;
        let start = Instant::now();
        let mut sent = 0;
        let mut epoch = 1;
        while sent < updates {
            let n = batch.min(updates - sent);
            h.send(&mut gen, sent..sent + n, index, peers)?;
            sent += n;
            epoch += 1;
            h.advance(epoch)?;
            let probe = h.probe.clone();
            worker.step_while(|| probe.less_than(&Time::Scalar(epoch)))?;
        }
        let elapsed = start.elapsed();
        h.input.close()?;
        Ok(elapsed)
    })?;
    let elapsed = times.into_iter().max().unwrap_or_default();
    Ok(updates as f64 / elapsed.as_secs_f64().max(1e-9))
}
