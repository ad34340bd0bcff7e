use std::collections::VecDeque;

use crate::arrange::{Arranged, TraceHandle};
use crate::collection::Collection;
use crate::data::{Data, Diff};
use crate::dataflow::{Capability, Metrics, OutputHandle, Pact};
use crate::error::{DataflowError, TraceError};
use crate::lattice::{Antichain, Shape, Time};
use crate::trace::Cursor;

type History<V> = Vec<(V, Vec<(Time, Diff)>)>;

fn load_key<K: Data, V: Data, C: Cursor<K, V>>(cursor: &mut C, out: &mut History<V>) {
    out.clear();
    while cursor.val_valid() {
        let mut times = Vec::new();
        cursor.map_times(|t, d| times.push((*t, d)));
        out.push((cursor.val().clone(), times));
        cursor.step_val();
    }
}

/// The remaining work of matching one batch against the other input's trace.
struct Deferred<B, T> {
    cap: Capability,
    batch: B,
    trace: T,
}

impl<B, T> Deferred<B, T> {
    /// Matches keys by alternating seeks until both cursors are exhausted or `fuel` runs out.
    /// Returns true when finished.
    fn work<K, Vb, Vt, D, I>(
        &mut self,
        output: &mut OutputHandle<(D, Time, Diff)>,
        logic: &mut impl FnMut(&K, &Vb, &Vt) -> I,
        fuel: &mut usize,
        metrics: &Metrics,
    ) -> Result<bool, DataflowError>
    where
        K: Data,
        Vb: Data,
        Vt: Data,
        D: Data,
        I: IntoIterator<Item = D>,
        B: Cursor<K, Vb>,
        T: Cursor<K, Vt>,
    {
        let start = self.batch.advances() + self.trace.advances();
        let mut produced = 0u64;
        let mut left: History<Vb> = Vec::new();
        let mut right: History<Vt> = Vec::new();
        let mut session = output.session(&self.cap)?;
        while self.batch.key_valid() && self.trace.key_valid() && *fuel > 0 {
            match self.trace.key().cmp(self.batch.key()) {
                std::cmp::Ordering::Less => self.trace.seek_key(self.batch.key()),
                std::cmp::Ordering::Greater => self.batch.seek_key(self.trace.key()),
                std::cmp::Ordering::Equal => {
                    let key = self.batch.key().clone();
                    let before = produced;
                    load_key(&mut self.batch, &mut left);
                    load_key(&mut self.trace, &mut right);
                    for (v1, h1) in left.iter() {
                        for (v2, h2) in right.iter() {
                            for d in logic(&key, v1, v2) {
                                for (t1, r1) in h1.iter() {
                                    for (t2, r2) in h2.iter() {
                                        let r = r1.checked_mul(*r2).ok_or(TraceError::DiffOverflow)?;
                                        session.give((d.clone(), t1.lub(t2), r));
                                        produced += 1;
                                    }
                                }
                            }
                        }
                    }
                    *fuel = fuel.saturating_sub((produced - before) as usize);
                    self.batch.step_key();
                    self.trace.step_key();
                }
            }
        }
        let advanced = self.batch.advances() + self.trace.advances() - start;
        Metrics::add(&metrics.join_cursor_advances, advanced);
        Metrics::add(&metrics.join_outputs, produced);
        Ok(!self.batch.key_valid() || !self.trace.key_valid())
    }
}

/// Minimum of the trace's own time shape, which differs from the scope's for entered traces.
fn trace_minimum<K: Data, V: Data>(trace: &TraceHandle<K, V>, scope_shape: Shape) -> Antichain {
    Antichain::minimum(if trace.view().entered { Shape::Scalar } else { scope_shape })
}

impl<K: Data, V1: Data> Arranged<K, V1> {
    /// Joins two arrangements on their keys, producing `logic(key, v1, v2)` for each matching
    /// pair at the least upper bound of their times.
    pub fn join_core<V2, D, I, L>(&self, other: &Arranged<K, V2>, mut logic: L) -> Collection<D>
    where
        V2: Data,
        D: Data,
        I: IntoIterator<Item = D>,
        L: FnMut(&K, &V1, &V2) -> I + 'static,
    {
        let scope = self.scope().clone();
        if !scope.same_dataflow(other.scope()) || scope.shape() != other.scope().shape() {
            scope.error("join inputs must belong to the same scope");
        }
        if self.trace.name().is_empty() || other.trace.name().is_empty() {
            scope.error("join inputs must be arranged");
        }
        let shape = scope.shape();
        let metrics = scope.metrics();
        let quantum = scope.config().join_fuel.max(1);
        let mut trace_a = Some(self.trace.clone());
        let mut trace_b = Some(other.trace.clone());
        let view_a = self.trace.view().clone();
        let view_b = other.trace.view().clone();
        let mut ack_a = trace_minimum(&self.trace, shape);
        let mut ack_b = trace_minimum(&other.trace, shape);
        if let Some(t) = trace_a.as_mut() {
            t.set_physical(Some(ack_a.clone()));
        }
        if let Some(t) = trace_b.as_mut() {
            t.set_physical(Some(ack_b.clone()));
        }

        let stream = self.stream.binary(&other.stream, Pact::Pipeline, Pact::Pipeline, "Join", move |cap, activator| {
            drop(cap);
            let mut todo_a = VecDeque::new();
            let mut todo_b = VecDeque::new();
            move |input_a, input_b, output| {
                while let Some((cap, batches)) = input_a.next()? {
                    for batch in batches {
                        if let Some(tb) = trace_b.as_ref() {
                            let cursor = tb.cursor_through(&ack_b).ok_or_else(|| {
                                DataflowError::Integrity(format!("trace {} has no boundary at {}", tb.name(), ack_b))
                            })?;
                            todo_a.push_back(Deferred { cap: cap.clone(), batch: view_a.batch_cursor(&batch), trace: cursor });
                        }
                        ack_a = batch.upper().clone();
                    }
                }
                while let Some((cap, batches)) = input_b.next()? {
                    for batch in batches {
                        if let Some(ta) = trace_a.as_ref() {
                            let cursor = ta.cursor_through(&ack_a).ok_or_else(|| {
                                DataflowError::Integrity(format!("trace {} has no boundary at {}", ta.name(), ack_a))
                            })?;
                            todo_b.push_back(Deferred { cap: cap.clone(), batch: view_b.batch_cursor(&batch), trace: cursor });
                        }
                        ack_b = batch.upper().clone();
                    }
                }

                let frontier_a = view_a.unmap_frontier(&input_a.frontier());
                let frontier_b = view_b.unmap_frontier(&input_b.frontier());
                if let Some(ta) = trace_a.as_mut() {
                    if let Some(boundary) = ta.latest_boundary(&frontier_a) {
                        if ack_a.dominated_by(&boundary) {
                            ack_a = boundary;
                        }
                    }
                    ta.set_physical(Some(ack_a.clone()));
                    // Future matches pair these times with times beyond the other input's frontier.
                    let since = view_a.unmap_frontier(&input_b.frontier());
                    if ta.since().dominated_by(&since) {
                        ta.set_since(since)?;
                    }
                }
                if let Some(tb) = trace_b.as_mut() {
                    if let Some(boundary) = tb.latest_boundary(&frontier_b) {
                        if ack_b.dominated_by(&boundary) {
                            ack_b = boundary;
                        }
                    }
                    tb.set_physical(Some(ack_b.clone()));
                    let since = view_b.unmap_frontier(&input_a.frontier());
                    if tb.since().dominated_by(&since) {
                        tb.set_since(since)?;
                    }
                }
                if input_b.frontier().is_empty() {
                    trace_a = None;
                }
                if input_a.frontier().is_empty() {
                    trace_b = None;
                }

                let mut fuel = quantum;
                while let Some(future) = todo_a.front_mut() {
                    if future.work(output, &mut logic, &mut fuel, &metrics)? {
                        todo_a.pop_front();
                    } else {
                        break;
                    }
                }
                let mut flipped = |k: &K, v2: &V2, v1: &V1| logic(k, v1, v2);
                while let Some(future) = todo_b.front_mut() {
                    if fuel == 0 {
                        break;
                    }
                    if future.work(output, &mut flipped, &mut fuel, &metrics)? {
                        todo_b.pop_front();
                    } else {
                        break;
                    }
                }
                if !todo_a.is_empty() || !todo_b.is_empty() {
                    activator.activate();
                }
                Ok(())
            }
        });
        Collection::new(stream)
    }

    /// Joins two arrangements, pairing values of equal keys.
    pub fn join<V2: Data>(&self, other: &Arranged<K, V2>) -> Collection<(K, (V1, V2))> {
        self.join_core(other, |k, v1, v2| Some((k.clone(), (v1.clone(), v2.clone()))))
    }
}
