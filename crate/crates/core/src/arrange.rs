//! Arrangements: a stream of shared batches together with handles onto the trace they build.
//!
//! The arrange operator is the only writer of its trace. Readers hold [`TraceHandle`]s, each
//! with its own compaction frontier; the trace compacts to the meet of those frontiers. The
//! writer refers to the trace weakly, so once every handle is dropped the trace is released
//! while the batch stream keeps flowing.

use std::cell::RefCell;
use std::collections::{BTreeMap, VecDeque};
use std::rc::{Rc, Weak};

use crate::collection::Collection;
use crate::data::{route_hash, Data, Diff, ExchangeData};
use crate::dataflow::progress::Summary;
use crate::dataflow::{Activator, CapabilitySet, OperatorBuilder, Pact, Scope, Stream};
use crate::error::{DataflowError, TraceError};
use crate::lattice::{Antichain, Shape, Time};
use crate::trace::{
    consolidate, Batch, BatchBuilder, BatchCursor, Cursor, CursorList, Description, Effort, Spine, TraceStats, Update,
    View, ViewCursor,
};

struct Reader {
    since: Antichain,
    physical: Option<Antichain>,
}

enum ImportEvent<K, V> {
    Batch(Batch<K, V>),
    Closed,
}

struct ImportQueue<K, V> {
    events: VecDeque<ImportEvent<K, V>>,
    activator: Activator,
}

type Listeners<K, V> = Rc<RefCell<Vec<Weak<RefCell<ImportQueue<K, V>>>>>>;

struct TraceState<K, V> {
    name: String,
    worker: usize,
    spine: Spine<K, V>,
    readers: BTreeMap<usize, Reader>,
    next_reader: usize,
    listeners: Listeners<K, V>,
}

impl<K: Data, V: Data> TraceState<K, V> {
    /// Pushes the readers' combined frontiers down to the spine.
    fn refresh(&mut self) {
        let mut since: Option<Antichain> = None;
        let mut physical: Option<Antichain> = None;
        for r in self.readers.values() {
            since = Some(match since {
                None => r.since.clone(),
                Some(s) => s.meet(&r.since),
            });
            if let Some(p) = &r.physical {
                physical = Some(match physical {
                    None => p.clone(),
                    Some(q) => q.meet(p),
                });
            }
        }
        if let Some(since) = since {
            if since != *self.spine.since() {
                // Reader frontiers only advance, so their meet does too.
                let _ = self.spine.set_since(since);
            }
        }
        self.spine.set_physical(physical);
    }
}

/// A reader's capability to navigate a trace and to constrain its compaction.
pub struct TraceHandle<K: Data, V: Data> {
    state: Rc<RefCell<TraceState<K, V>>>,
    id: usize,
    view: View<K, V>,
}

impl<K: Data, V: Data> Clone for TraceHandle<K, V> {
    fn clone(&self) -> Self {
        let mut state = self.state.borrow_mut();
        let id = state.next_reader;
        state.next_reader += 1;
        let reader = &state.readers[&self.id];
        let copy = Reader { since: reader.since.clone(), physical: reader.physical.clone() };
        state.readers.insert(id, copy);
        drop(state);
        TraceHandle { state: self.state.clone(), id, view: self.view.clone() }
    }
}

impl<K: Data, V: Data> Drop for TraceHandle<K, V> {
    fn drop(&mut self) {
        let mut state = self.state.borrow_mut();
        state.readers.remove(&self.id);
        state.refresh();
    }
}

/// Cursor type produced by trace handles.
pub type TraceCursor<K, V> = ViewCursor<K, V, CursorList<BatchCursor<K, V>>>;

impl<K: Data, V: Data> TraceHandle<K, V> {
    pub fn name(&self) -> String {
        self.state.borrow().name.clone()
    }

    pub fn view(&self) -> &View<K, V> {
        &self.view
    }

    /// The frontier beyond which this handle's reads are exact.
    pub fn since(&self) -> Antichain {
        self.state.borrow().readers[&self.id].since.clone()
    }

    /// The trace's compaction frontier across all readers.
    pub fn trace_since(&self) -> Antichain {
        self.state.borrow().spine.since().clone()
    }

    /// The frontier through which batches have been sealed into the trace.
    pub fn upper(&self) -> Antichain {
        self.state.borrow().spine.upper().clone()
    }

    /// Allows the trace to compact times not beyond `frontier`. Frontiers must not retreat.
    pub fn set_since(&mut self, frontier: Antichain) -> Result<(), TraceError> {
        let mut state = self.state.borrow_mut();
        let reader = state.readers.get_mut(&self.id).expect("handle is registered");
        if !reader.since.dominated_by(&frontier) {
            return Err(TraceError::SinceRetreat { current: reader.since.clone(), requested: frontier });
        }
        if reader.since != frontier {
            reader.since = frontier;
            state.refresh();
        }
        Ok(())
    }

    /// Asks the trace to keep a batch boundary at `frontier` by not merging past it.
    pub fn set_physical(&mut self, frontier: Option<Antichain>) {
        let mut state = self.state.borrow_mut();
        let reader = state.readers.get_mut(&self.id).expect("handle is registered");
        if reader.physical != frontier {
            reader.physical = frontier;
            state.refresh();
        }
    }

    pub fn cursor(&self) -> TraceCursor<K, V> {
        ViewCursor::new(self.state.borrow().spine.cursor(), self.view.clone())
    }

    /// A cursor over the batches through `upper`, if the trace has a boundary there.
    pub fn cursor_through(&self, upper: &Antichain) -> Option<TraceCursor<K, V>> {
        let state = self.state.borrow();
        state.spine.cursor_through(upper).map(|c| ViewCursor::new(c, self.view.clone()))
    }

    /// The latest batch boundary at or before `frontier`.
    pub fn latest_boundary(&self, frontier: &Antichain) -> Option<Antichain> {
        self.state.borrow().spine.latest_boundary(frontier)
    }

    /// Stored batches, oldest first.
    pub fn batches(&self) -> Vec<Batch<K, V>> {
        self.state.borrow().spine.batches()
    }

    pub fn stats(&self) -> Rc<TraceStats> {
        self.state.borrow().spine.stats().clone()
    }

    pub fn resident_updates(&self) -> usize {
        self.state.borrow().spine.resident_updates()
    }

    pub fn live_batches(&self) -> usize {
        self.state.borrow().spine.live_batches()
    }

    /// Completes every merge the trace would eventually perform, without a fuel bound.
    /// Returns the units of work spent.
    pub fn settle(&self) -> Result<u64, TraceError> {
        self.state.borrow_mut().spine.maintain(u64::MAX)
    }

    /// A cursor over batch contents as seen through this handle's view.
    pub fn batch_cursor(&self, batch: &Batch<K, V>) -> ViewCursor<K, V, BatchCursor<K, V>> {
        self.view.batch_cursor(batch)
    }

    /// The accumulated `(val, count)` pairs of `key` at `time`, which must be beyond this
    /// handle's since and not beyond the trace's upper.
    pub fn read_accumulation(&self, key: &K, time: &Time) -> Result<Vec<(V, Diff)>, TraceError> {
        let underlying = if self.view.entered { time.leave() } else { *time };
        let since = self.since();
        let upper = self.upper();
        if !since.less_equal(&underlying) || upper.less_equal(&underlying) {
            return Err(TraceError::OutsideWindow { time: underlying, since, upper });
        }
        let mut cursor = self.cursor();
        let mut out = Vec::new();
        cursor.seek_key(key);
        if cursor.key_valid() && cursor.key() == key {
            while cursor.val_valid() {
                let mut sum: Diff = 0;
                let mut overflow = false;
                cursor.map_times(|t, d| {
                    if t.less_equal(time) {
                        match sum.checked_add(d) {
                            Some(s) => sum = s,
                            None => overflow = true,
                        }
                    }
                });
                if overflow {
                    return Err(TraceError::DiffOverflow);
                }
                if sum != 0 {
                    out.push((cursor.val().clone(), sum));
                }
                cursor.step_val();
            }
        }
        Ok(out)
    }

    /// A handle that additionally skips `(key, val)` pairs failing `predicate`.
    pub fn filter(&self, predicate: impl Fn(&K, &V) -> bool + 'static) -> TraceHandle<K, V> {
        let mut handle = self.clone();
        handle.view.filters.push(Rc::new(predicate));
        handle
    }

    fn entered(&self) -> TraceHandle<K, V> {
        let mut handle = self.clone();
        handle.view.entered = true;
        handle
    }

    /// A new arrangement in the root scope of another dataflow on this worker, replaying the
    /// trace's current contents and then forwarding batches as they are sealed.
    pub fn import(&self, scope: &Scope) -> Arranged<K, V> {
        if scope.shape() != Shape::Scalar || self.view.entered {
            scope.error("traces can only be imported into a root scope");
        }
        if scope.index() != self.state.borrow().worker {
            scope.error("traces can only be imported on the worker that owns them");
        }
        let name = format!("Import({})", self.name());
        let mut builder = OperatorBuilder::new(&name, scope);
        let (mut output, stream) = builder.new_output::<Batch<K, V>>();
        let activator = builder.activator();
        let queue = Rc::new(RefCell::new(ImportQueue { events: VecDeque::new(), activator }));

        let mut handle = self.clone();
        handle.set_physical(None);
        let (snapshot, upper) = {
            let state = self.state.borrow();
            state.listeners.borrow_mut().push(Rc::downgrade(&queue));
            (state.spine.batches(), state.spine.upper().clone())
        };
        // The operator's own handle only pins the batch boundary it has forwarded through.
        let mut pin = self.clone();
        pin.set_since(Antichain::new()).expect("the empty frontier never retreats");
        pin.set_physical(Some(upper.clone()));
        let since = handle.since();
        let min = Antichain::minimum(Shape::Scalar);
        let replay = if snapshot.len() == 1 && snapshot[0].since() == &since && snapshot[0].lower() == &min {
            snapshot[0].clone()
        } else {
            let mut updates: Vec<Update<K, V>> = Vec::new();
            for b in snapshot.iter() {
                updates.extend(b.updates());
            }
            match consolidate(updates, &since) {
                Ok(updates) => Batch::from_sorted(Description::new(min, upper.clone(), since), &updates),
                Err(e) => {
                    scope.error(format!("importing {}: {}", self.name(), e));
                    Batch::empty(min, upper.clone(), since)
                }
            }
        };

        builder.build(move |cap| {
            let mut cap = cap;
            let mut pin = Some(pin);
            let mut pending: VecDeque<ImportEvent<K, V>> = VecDeque::from([ImportEvent::Batch(replay)]);
            move || {
                pending.extend(queue.borrow_mut().events.drain(..));
                while let Some(event) = pending.pop_front() {
                    match event {
                        ImportEvent::Batch(batch) => {
                            if let Some(c) = cap.as_mut() {
                                let upper = batch.upper().clone();
                                output.give_vec(c, vec![batch])?;
                                match upper.as_option() {
                                    Some(t) => c.downgrade(t)?,
                                    None => cap = None,
                                }
                                if let Some(p) = pin.as_mut() {
                                    p.set_physical(Some(upper));
                                }
                            }
                        }
                        ImportEvent::Closed => {
                            cap = None;
                            pin = None;
                        }
                    }
                }
                Ok(())
            }
        });
        Arranged { stream, trace: handle }
    }
}

/// The single writer of a trace.
pub(crate) struct TraceWriter<K: Data, V: Data> {
    state: Weak<RefCell<TraceState<K, V>>>,
    listeners: Listeners<K, V>,
    stats: Rc<TraceStats>,
}

impl<K: Data, V: Data> TraceWriter<K, V> {
    /// A new trace, its writer, and the first reader handle.
    pub fn new(name: &str, worker: usize, shape: Shape, effort: Effort) -> (TraceWriter<K, V>, TraceHandle<K, V>) {
        let stats = Rc::new(TraceStats::default());
        stats.writers.set(1);
        let listeners: Listeners<K, V> = Rc::new(RefCell::new(Vec::new()));
        let mut readers = BTreeMap::new();
        readers.insert(0, Reader { since: Antichain::minimum(shape), physical: None });
        let state = Rc::new(RefCell::new(TraceState {
            name: name.to_string(),
            worker,
            spine: Spine::with_stats(shape, effort, stats.clone()),
            readers,
            next_reader: 1,
            listeners: listeners.clone(),
        }));
        let writer = TraceWriter { state: Rc::downgrade(&state), listeners, stats };
        (writer, TraceHandle { state, id: 0, view: View::default() })
    }

    /// Appends `batch` to the trace, if any reader remains, and notifies importers.
    pub fn insert(&mut self, batch: Batch<K, V>) -> Result<(), TraceError> {
        if let Some(state) = self.state.upgrade() {
            state.borrow_mut().spine.insert(batch.clone())?;
        } else {
            self.stats.resident_updates.set(0);
            self.stats.live_batches.set(0);
        }
        let mut listeners = self.listeners.borrow_mut();
        listeners.retain(|l| match l.upgrade() {
            Some(queue) => {
                let mut q = queue.borrow_mut();
                q.events.push_back(ImportEvent::Batch(batch.clone()));
                q.activator.activate();
                true
            }
            None => false,
        });
        Ok(())
    }
}

impl<K: Data, V: Data> Drop for TraceWriter<K, V> {
    fn drop(&mut self) {
        for l in self.listeners.borrow().iter() {
            if let Some(queue) = l.upgrade() {
                let mut q = queue.borrow_mut();
                q.events.push_back(ImportEvent::Closed);
                q.activator.activate();
            }
        }
    }
}

/// Seals staged updates into batches as the input frontier advances, one batch per held
/// capability that the frontier has passed.
pub(crate) struct Sealer<K: Data, V: Data> {
    pub staged: Vec<Update<K, V>>,
    pub caps: CapabilitySet,
    pub lower: Antichain,
    /// Keep capabilities at the input frontier, so that empty batches flow downstream.
    pub hold_frontier: bool,
    pub unconsolidated: bool,
}

impl<K: Data, V: Data> Sealer<K, V> {
    pub fn new(shape: Shape, hold_frontier: bool, unconsolidated: bool) -> Self {
        Sealer { staged: Vec::new(), caps: CapabilitySet::new(), lower: Antichain::minimum(shape), hold_frontier, unconsolidated }
    }

    /// Seals everything not beyond `frontier`. For each sealed batch, `emit` receives the
    /// capability and batch; batches emitted to the trace only are passed with `None`.
    pub fn seal(
        &mut self,
        frontier: &Antichain,
        emit: impl FnMut(Option<&crate::dataflow::Capability>, Batch<K, V>) -> Result<(), DataflowError>,
    ) -> Result<(), DataflowError> {
        self.seal_keeping(frontier, &Antichain::new(), emit)
    }

    /// As `seal`, additionally retaining capabilities for the times in `extra`.
    pub fn seal_keeping(
        &mut self,
        frontier: &Antichain,
        extra: &Antichain,
        mut emit: impl FnMut(Option<&crate::dataflow::Capability>, Batch<K, V>) -> Result<(), DataflowError>,
    ) -> Result<(), DataflowError> {
        if *frontier == self.lower {
            return Ok(());
        }
        let ready: Vec<Time> = self.caps.iter().map(|c| *c.time()).filter(|t| !frontier.less_equal(t)).collect();
        for (i, time) in ready.iter().enumerate() {
            let mut upper = frontier.clone();
            for later in ready[i + 1..].iter() {
                upper.insert(*later);
            }
            let (now, later): (Vec<_>, Vec<_>) = std::mem::take(&mut self.staged).into_iter().partition(|(_, t, _)| !upper.less_equal(t));
            self.staged = later;
            let builder = BatchBuilder::with_updates(now);
            let batch = if self.unconsolidated {
                builder.seal_unconsolidated(self.lower.clone(), upper.clone())
            } else {
                builder.seal(self.lower.clone(), upper.clone())?
            };
            let cap = self.caps.find(time).expect("capability for sealed time").delayed(time)?;
            emit(Some(&cap), batch)?;
            self.lower = upper;
        }
        if self.lower != *frontier {
            let batch = Batch::empty(self.lower.clone(), frontier.clone(), crate::trace::minimal_since(&self.lower, frontier));
            emit(None, batch)?;
            self.lower = frontier.clone();
        }
        let mut keep: Antichain = self.staged.iter().map(|(_, t, _)| *t).collect();
        for t in extra.elements() {
            keep.insert(*t);
        }
        if self.hold_frontier {
            for t in frontier.elements() {
                keep.insert(*t);
            }
        }
        self.caps.downgrade(&keep)?;
        Ok(())
    }
}

/// An arranged collection: batches of `((K, V), time, diff)` updates and a handle to their trace.
pub struct Arranged<K: Data, V: Data> {
    pub stream: Stream<Batch<K, V>>,
    pub trace: TraceHandle<K, V>,
}

impl<K: Data, V: Data> Clone for Arranged<K, V> {
    fn clone(&self) -> Self {
        Arranged { stream: self.stream.clone(), trace: self.trace.clone() }
    }
}

impl<K: Data, V: Data> Arranged<K, V> {
    pub fn scope(&self) -> &Scope {
        self.stream.scope()
    }

    /// The arrangement viewed from an iteration scope, sharing the same trace.
    pub fn enter(&self, inner: &Scope) -> Arranged<K, V> {
        if !inner.same_dataflow(self.scope()) || inner.shape() != Shape::Product || self.scope().shape() != Shape::Scalar
        {
            inner.error("enter requires a root-scope arrangement and an iteration scope of the same dataflow");
        }
        let stream = self.stream.rescope(inner, Summary::Enter, "EnterArranged", |b| b);
        Arranged { stream, trace: self.trace.entered() }
    }

    /// The arrangement restricted to `(key, val)` pairs satisfying `predicate`, without copying.
    pub fn filter(&self, predicate: impl Fn(&K, &V) -> bool + 'static) -> Arranged<K, V> {
        Arranged { stream: self.stream.clone(), trace: self.trace.filter(predicate) }
    }

    /// The updates of the arrangement as a collection of `f(key, val)`.
    pub fn as_collection<D: Data>(&self, f: impl Fn(&K, &V) -> D + 'static) -> Collection<D> {
        let view = self.trace.view().clone();
        let stream = self.stream.unary(Pact::Pipeline, "AsCollection", move |_cap, _| {
            move |input, output| {
                while let Some((cap, batches)) = input.next()? {
                    let mut session = output.session(&cap)?;
                    for batch in batches {
                        let mut cursor = view.batch_cursor(&batch);
                        while cursor.key_valid() {
                            while cursor.val_valid() {
                                let d = f(cursor.key(), cursor.val());
                                cursor.map_times(|t, r| session.give((d.clone(), *t, r)));
                                cursor.step_val();
                            }
                            cursor.step_key();
                        }
                    }
                }
                Ok(())
            }
        });
        Collection::new(stream)
    }
}

impl<K: ExchangeData, V: ExchangeData> Collection<(K, V)> {
    /// Arranges the collection by key, sharding keys across workers by their hash.
    pub fn arrange_by_key(&self) -> Arranged<K, V> {
        self.arrange_named("Arrange")
    }

    pub fn arrange_named(&self, name: &str) -> Arranged<K, V> {
        let scope = self.scope().clone();
        let config = scope.config();
        let pact = Pact::exchange(|((k, _), _, _): &((K, V), Time, Diff)| route_hash(k));
        let (writer, handle) = TraceWriter::new(name, scope.index(), scope.shape(), config.merge_effort);
        let hold = scope.shape() == Shape::Scalar;
        let unconsolidated = config.faults.skip_consolidation;
        let shape = scope.shape();
        let stream = self.inner.unary(pact, name, move |cap, _| {
            let mut writer = writer;
            let mut sealer = Sealer::<K, V>::new(shape, hold, unconsolidated);
            sealer.caps.insert(cap);
            move |input, output| {
                while let Some((cap, data)) = input.next()? {
                    for u in data.iter() {
                        if !sealer.lower.less_equal(&u.1) {
                            return Err(DataflowError::Integrity(format!(
                                "update at {} arrived after the arrangement sealed through {}",
                                u.1, sealer.lower
                            )));
                        }
                    }
                    sealer.caps.insert(cap);
                    sealer.staged.extend(data);
                }
                let frontier = input.frontier().clone();
                sealer.seal(&frontier, |cap, batch| {
                    writer.insert(batch.clone())?;
                    if let Some(cap) = cap {
                        output.give_vec(cap, vec![batch])?;
                    }
                    Ok(())
                })
            }
        });
        Arranged { stream, trace: handle }
    }
}

impl<K: ExchangeData> Collection<K> {
    /// Arranges the collection with the records themselves as keys.
    pub fn arrange_by_self(&self) -> Arranged<K, ()> {
        self.map(|k| (k, ())).arrange_named("ArrangeBySelf")
    }
}
