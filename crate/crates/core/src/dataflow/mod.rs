//! A small multi-worker dataflow runtime with partially ordered progress tracking.
//!
//! Each worker thread builds the same dataflows in the same order. Operators exchange records
//! through local queues or bounded cross-worker channels, and workers broadcast pointstamp
//! changes so that every operator input learns which times it may still receive.

pub mod channels;
pub mod input;
pub mod operator;
pub mod probe;
pub mod progress;

use std::cell::Cell;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::rc::Rc;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel::{Receiver, Sender};

pub use channels::{Message, Pact, StreamData};
pub use input::StreamInput;
pub use operator::{Activator, Capability, CapabilitySet, InputHandle, OperatorBuilder, OutputHandle, Scope, Session, Stream};
pub use probe::{Feedback, ProbeHandle};

use crate::error::DataflowError;
use crate::lattice::{Antichain, Time};
use crate::trace::Effort;
use channels::{Flush, SharedAllocator};
use operator::{DataflowBuilder, Log, Schedule};
use progress::{Graph, Location, Tracker};

/// Test-only fault injection.
#[derive(Clone, Debug, Default)]
pub struct Faults {
    /// Arrangements seal batches without consolidating them.
    pub skip_consolidation: bool,
}

#[derive(Clone, Debug)]
pub struct Config {
    pub workers: usize,
    /// Capacity, in messages, of each cross-worker data channel.
    pub channel_capacity: usize,
    pub merge_effort: Effort,
    /// Largest round an iteration may reach before failing.
    pub max_rounds: u64,
    /// Cursor steps a join performs per scheduling before yielding.
    pub join_fuel: usize,
    pub faults: Faults,
    /// Reduce evaluates its logic twice per key and time and fails if the results differ.
    pub check_reduce_determinism: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            workers: 1,
            channel_capacity: 1024,
            merge_effort: Effort::default(),
            max_rounds: 1_000_000,
            join_fuel: 1 << 16,
            faults: Faults::default(),
            check_reduce_determinism: false,
        }
    }
}

impl Config {
    pub fn workers(workers: usize) -> Self {
        Config { workers, ..Config::default() }
    }
}

/// Per-worker counters maintained by operators.
#[derive(Debug, Default)]
pub struct Metrics {
    pub join_cursor_advances: Cell<u64>,
    pub join_outputs: Cell<u64>,
    pub reduce_evaluations: Cell<u64>,
}

impl Metrics {
    pub fn add(cell: &Cell<u64>, n: u64) {
        cell.set(cell.get() + n);
    }
}

#[derive(Clone)]
pub(crate) struct WorkerContext {
    pub index: usize,
    pub peers: usize,
    pub config: Rc<Config>,
    pub allocator: SharedAllocator,
    pub metrics: Rc<Metrics>,
}

type Changes = Vec<((Location, Time), i64)>;

struct ProgressMsg {
    dataflow: usize,
    changes: Changes,
}

struct Node {
    name: String,
    frontiers: Vec<Rc<std::cell::RefCell<Antichain>>>,
    schedule: Option<Schedule>,
}

struct Installed {
    graph: Graph,
    tracker: Tracker,
    nodes: Vec<Node>,
    log: Log,
    flushers: Vec<Rc<std::cell::RefCell<dyn Flush>>>,
    activators: Vec<Rc<Cell<bool>>>,
}

enum Slot {
    /// Progress from peers that arrived before this worker installed the dataflow.
    Pending(Vec<Changes>),
    Running(Box<Installed>),
    Done,
}

/// One worker's share of a computation.
pub struct Worker {
    context: WorkerContext,
    slots: Vec<Slot>,
    next_dataflow: usize,
    peers_tx: Vec<Sender<ProgressMsg>>,
    rx: Receiver<ProgressMsg>,
    abort: Arc<AtomicBool>,
}

impl Worker {
    pub fn index(&self) -> usize {
        self.context.index
    }

    pub fn peers(&self) -> usize {
        self.context.peers
    }

    pub fn config(&self) -> &Config {
        &self.context.config
    }

    pub fn metrics(&self) -> Rc<Metrics> {
        self.context.metrics.clone()
    }

    /// Builds and installs a dataflow in a fresh root scope.
    ///
    /// Returns a construction error, installing nothing, if any operator was misconfigured.
    pub fn dataflow<R>(&mut self, f: impl FnOnce(&Scope) -> R) -> Result<R, DataflowError> {
        let index = self.next_dataflow;
        self.next_dataflow += 1;
        let builder = Rc::new(std::cell::RefCell::new(DataflowBuilder::new(index, self.context.clone())));
        let scope = Scope::new(builder.clone(), crate::lattice::Shape::Scalar);
        let result = f(&scope);
        drop(scope);
        let mut b = builder.borrow_mut();
        b.sealed = true;
        if !b.errors.is_empty() {
            return Err(DataflowError::Construction(b.errors.join("; ")));
        }
        let graph = b.graph();
        let mut tracker = Tracker::new();
        let peers = self.context.peers as i64;
        for &(loc, t) in b.initial.iter() {
            tracker.update(loc, t, peers);
        }
        let nodes = b
            .nodes
            .iter_mut()
            .map(|n| Node { name: n.name.clone(), frontiers: n.frontiers.clone(), schedule: n.schedule.take() })
            .collect();
        let installed = Installed {
            graph,
            tracker,
            nodes,
            log: b.log.clone(),
            flushers: std::mem::take(&mut b.flushers),
            activators: std::mem::take(&mut b.activators),
        };
        drop(b);
        while self.slots.len() <= index {
            self.slots.push(Slot::Pending(Vec::new()));
        }
        let mut installed = Box::new(installed);
        if let Slot::Pending(buffered) = std::mem::replace(&mut self.slots[index], Slot::Done) {
            for changes in buffered {
                installed.tracker.apply(&changes);
            }
        }
        self.slots[index] = Slot::Running(installed);
        Ok(result)
    }

    fn receive(&mut self, msg: ProgressMsg) {
        while self.slots.len() <= msg.dataflow {
            self.slots.push(Slot::Pending(Vec::new()));
        }
        match &mut self.slots[msg.dataflow] {
            Slot::Pending(buffer) => buffer.push(msg.changes),
            Slot::Running(d) => d.tracker.apply(&msg.changes),
            Slot::Done => {}
        }
    }

    /// Applies locally logged pointstamp changes and broadcasts them. Returns true if any.
    fn drain(index: usize, d: &mut Installed, peers_tx: &[Sender<ProgressMsg>], me: usize) -> bool {
        let changes = d.log.borrow_mut().take();
        if changes.is_empty() {
            return false;
        }
        d.tracker.apply(&changes);
        for (i, tx) in peers_tx.iter().enumerate() {
            if i != me {
                // A disconnected peer has failed; the abort flag reports it.
                let _ = tx.send(ProgressMsg { dataflow: index, changes: changes.clone() });
            }
        }
        true
    }

    fn refresh_frontiers(d: &mut Installed) -> Result<(), DataflowError> {
        if !d.tracker.take_dirty() {
            return Ok(());
        }
        let frontiers = d.tracker.frontiers(&d.graph);
        for (node, fs) in d.nodes.iter().zip(frontiers) {
            for (cell, next) in node.frontiers.iter().zip(fs) {
                let mut current = cell.borrow_mut();
                if *current != next {
                    if !current.dominated_by(&next) {
                        return Err(DataflowError::Integrity(format!(
                            "frontier at operator {:?} regressed from {} to {}",
                            node.name, current, next
                        )));
                    }
                    *current = next;
                }
            }
        }
        Ok(())
    }

    /// Performs one round of scheduling. Returns true if anything happened that may enable
    /// further work.
    pub fn step(&mut self) -> Result<bool, DataflowError> {
        if self.abort.load(Ordering::SeqCst) {
            return Err(DataflowError::Aborted);
        }
        let mut active = false;
        while let Ok(msg) = self.rx.try_recv() {
            active = true;
            self.receive(msg);
        }
        let me = self.context.index;
        for index in 0..self.slots.len() {
            let Slot::Running(d) = &mut self.slots[index] else { continue };
            active |= Self::drain(index, d, &self.peers_tx, me);
            Self::refresh_frontiers(d)?;
            for a in d.activators.iter() {
                a.set(false);
            }
            for node in d.nodes.iter_mut() {
                if let Some(schedule) = node.schedule.as_mut() {
                    schedule()?;
                }
            }
            active |= d.activators.iter().any(|a| a.get());
            active |= Self::drain(index, d, &self.peers_tx, me);
            for f in d.flushers.iter() {
                active |= f.borrow_mut().flush();
            }
            if d.tracker.is_empty() {
                Self::refresh_frontiers(d)?;
                // A last pass lets operators observe closed inputs and release resources.
                for node in d.nodes.iter_mut() {
                    if let Some(schedule) = node.schedule.as_mut() {
                        schedule()?;
                    }
                }
                self.slots[index] = Slot::Done;
                active = true;
            }
        }
        Ok(active)
    }

    /// Steps, waiting briefly for peers when idle.
    pub fn step_or_park(&mut self) -> Result<bool, DataflowError> {
        let active = self.step()?;
        if !active && self.running() > 0 {
            if let Ok(msg) = self.rx.recv_timeout(Duration::from_millis(1)) {
                self.receive(msg);
            }
        }
        Ok(active)
    }

    /// Steps while `condition` holds.
    pub fn step_while(&mut self, mut condition: impl FnMut() -> bool) -> Result<(), DataflowError> {
        while condition() {
            self.step_or_park()?;
        }
        Ok(())
    }

    /// Number of installed dataflows that have not yet completed.
    pub fn running(&self) -> usize {
        self.slots.iter().filter(|s| matches!(s, Slot::Running(_))).count()
    }

    /// Steps until every installed dataflow has completed.
    pub fn drain_all(&mut self) -> Result<(), DataflowError> {
        while self.running() > 0 {
            self.step_or_park()?;
        }
        Ok(())
    }
}

/// Runs `f` on `config.workers` worker threads and returns each worker's result in index order.
///
/// After `f` returns, each worker keeps stepping until its dataflows complete. A failure on any
/// worker aborts the others; the first error other than `Aborted` is returned.
pub fn execute<R, F>(config: Config, f: F) -> Result<Vec<R>, DataflowError>
where
    R: Send,
    F: Fn(&mut Worker) -> Result<R, DataflowError> + Sync,
{
    let workers = config.workers.max(1);
    let allocator: SharedAllocator = Arc::default();
    let abort = Arc::new(AtomicBool::new(false));
    let (txs, rxs): (Vec<_>, Vec<_>) = (0..workers).map(|_| crossbeam_channel::unbounded()).unzip();
    let results: Vec<Result<R, DataflowError>> = std::thread::scope(|s| {
        let handles: Vec<_> = rxs
            .into_iter()
            .enumerate()
            .map(|(index, rx)| {
                let txs = txs.clone();
                let allocator = allocator.clone();
                let abort = abort.clone();
                let config = config.clone();
                let f = &f;
                s.spawn(move || {
                    let outcome = catch_unwind(AssertUnwindSafe(|| {
                        let mut worker = Worker {
                            context: WorkerContext {
                                index,
                                peers: workers,
                                config: Rc::new(config),
                                allocator,
                                metrics: Rc::new(Metrics::default()),
                            },
                            slots: Vec::new(),
                            next_dataflow: 0,
                            peers_tx: txs,
                            rx,
                            abort: abort.clone(),
                        };
                        let r = f(&mut worker)?;
                        worker.drain_all()?;
                        Ok(r)
                    }));
                    let result = match outcome {
                        Ok(r) => r,
                        Err(panic) => {
                            let msg = panic
                                .downcast_ref::<String>()
                                .cloned()
                                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                                .unwrap_or_else(|| "worker panicked".to_string());
                            Err(DataflowError::Panic(msg))
                        }
                    };
                    if result.is_err() {
                        abort.store(true, Ordering::SeqCst);
                    }
                    result
                })
            })
            .collect();
        drop(txs);
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(DataflowError::Panic("worker thread".into())))).collect()
    });
    let mut first_abort = None;
    let mut out = Vec::with_capacity(workers);
    let mut failure = None;
    for r in results {
        match r {
            Ok(v) => out.push(v),
            Err(DataflowError::Aborted) => first_abort = first_abort.or(Some(DataflowError::Aborted)),
            Err(e) => {
                if failure.is_none() {
                    failure = Some(e);
                }
            }
        }
    }
    if let Some(e) = failure.or(first_abort) {
        return Err(e);
    }
    Ok(out)
}
