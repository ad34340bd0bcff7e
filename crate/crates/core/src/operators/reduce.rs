use std::collections::{BTreeMap, BTreeSet};

use crate::arrange::{Arranged, Sealer, TraceWriter};
use crate::data::{Data, Diff};
use crate::dataflow::{Metrics, Pact};
use crate::error::DataflowError;
use crate::lattice::{Antichain, Time};
use crate::trace::{consolidate_vals, Cursor};

type History<V> = Vec<(V, Vec<(Time, Diff)>)>;

/// Reads the full history of `key` from `cursor`, which is positioned at or before it.
fn history<K: Data, V: Data, C: Cursor<K, V>>(cursor: &mut C, key: &K) -> History<V> {
    let mut out = Vec::new();
    cursor.seek_key(key);
    if cursor.key_valid() && cursor.key() == key {
        while cursor.val_valid() {
            let mut times = Vec::new();
            cursor.map_times(|t, d| times.push((*t, d)));
            out.push((cursor.val().clone(), times));
            cursor.step_val();
        }
    }
    out
}

fn accumulate<V: Data>(history: &History<V>, extra: &[(V, Time, Diff)], time: &Time) -> Result<Vec<(V, Diff)>, DataflowError> {
    let mut acc = Vec::new();
    for (v, times) in history.iter() {
        for (t, d) in times.iter() {
            if t.less_equal(time) {
                acc.push((v.clone(), *d));
            }
        }
    }
    for (v, t, d) in extra.iter() {
        if t.less_equal(time) {
            acc.push((v.clone(), *d));
        }
    }
    consolidate_vals(&mut acc)?;
    Ok(acc)
}

impl<K: Data, V: Data> Arranged<K, V> {
    /// Maintains, for every key, `logic` applied to the key's accumulated values.
    ///
    /// `logic` receives the values with positive or negative counts, sorted by value, and
    /// appends its output `(val, count)` pairs. It is not called for keys with no values. The
    /// output is arranged in a trace of its own.
    pub fn reduce_core<V2, L>(&self, name: &str, mut logic: L) -> Arranged<K, V2>
    where
        V2: Data,
        L: FnMut(&K, &[(V, Diff)], &mut Vec<(V2, Diff)>) + 'static,
    {
        let scope = self.scope().clone();
        let shape = scope.shape();
        let config = scope.config();
        let metrics = scope.metrics();
        let check = config.check_reduce_determinism;
        let (writer, out_handle) = TraceWriter::<K, V2>::new(name, scope.index(), shape, config.merge_effort);
        let mut own_output = Some(out_handle.clone());
        let mut input_trace = Some(self.trace.clone());
        let view = self.trace.view().clone();

        let stream = self.stream.unary(Pact::Pipeline, name, move |cap, _| {
            drop(cap);
            let mut writer = writer;
            let mut sealer = Sealer::<K, V2>::new(shape, false, false);
            let mut pending: BTreeMap<K, BTreeSet<Time>> = BTreeMap::new();
            move |input, output| {
                while let Some((cap, batches)) = input.next()? {
                    sealer.caps.insert(cap);
                    for batch in batches {
                        let mut cursor = view.batch_cursor(&batch);
                        while cursor.key_valid() {
                            let times = pending.entry(cursor.key().clone()).or_default();
                            while cursor.val_valid() {
                                cursor.map_times(|t, _| {
                                    times.insert(*t);
                                });
                                cursor.step_val();
                            }
                            cursor.step_key();
                        }
                    }
                }
                let frontier = input.frontier().clone();
                if frontier == sealer.lower {
                    return Ok(());
                }

                let (Some(in_trace), Some(out_trace)) = (input_trace.as_ref(), own_output.as_ref()) else {
                    return Ok(());
                };
                let mut in_cursor = in_trace.cursor();
                let mut out_cursor = out_trace.cursor();
                let mut target = Vec::new();
                let mut again = Vec::new();
                for (key, times) in pending.iter_mut() {
                    if !times.iter().any(|t| !frontier.less_equal(t)) {
                        continue;
                    }
                    let input_history = history(&mut in_cursor, key);
                    let output_history = history(&mut out_cursor, key);
                    let mut input_times: Vec<Time> = input_history.iter().flat_map(|(_, h)| h.iter().map(|(t, _)| *t)).collect();
                    input_times.sort();
                    input_times.dedup();
                    let mut local: Vec<(V2, Time, Diff)> = Vec::new();
                    while let Some(time) = times.iter().find(|t| !frontier.less_equal(t)).copied() {
                        times.remove(&time);
                        for t in input_times.iter() {
                            if !t.less_equal(&time) {
                                times.insert(time.lub(t));
                            }
                        }
                        let acc = accumulate(&input_history, &[], &time)?;
                        target.clear();
                        if !acc.is_empty() {
                            logic(key, &acc, &mut target);
                            consolidate_vals(&mut target)?;
                            Metrics::add(&metrics.reduce_evaluations, 1);
                            if check {
                                again.clear();
                                logic(key, &acc, &mut again);
                                consolidate_vals(&mut again)?;
                                if again != target {
                                    return Err(DataflowError::Integrity(format!(
                                        "reduce logic gave different results for key {:?} at {}",
                                        key, time
                                    )));
                                }
                            }
                        }
                        let current = accumulate(&output_history, &local, &time)?;
                        let mut delta: Vec<(V2, Diff)> = target.clone();
                        delta.extend(current.into_iter().map(|(v, d)| (v, -d)));
                        consolidate_vals(&mut delta)?;
                        local.extend(delta.into_iter().map(|(v, d)| (v, time, d)));
                    }
                    sealer.staged.extend(local.into_iter().map(|(v, t, d)| ((key.clone(), v), t, d)));
                }
                pending.retain(|_, times| !times.is_empty());

                let future: Antichain = pending.values().flat_map(|ts| ts.iter().copied()).collect();
                sealer.seal_keeping(&frontier, &future, |cap, batch| {
                    writer.insert(batch.clone())?;
                    if let Some(cap) = cap {
                        output.give_vec(cap, vec![batch])?;
                    }
                    Ok(())
                })?;

                // Later evaluations happen only at times beyond the input frontier.
                let upper = frontier.meet(&future);
                if let Some(t) = input_trace.as_mut() {
                    let since = t.view().unmap_frontier(&upper);
                    if t.since().dominated_by(&since) {
                        t.set_since(since)?;
                    }
                }
                if let Some(t) = own_output.as_mut() {
                    if t.since().dominated_by(&upper) {
                        t.set_since(upper.clone())?;
                    }
                }
                if frontier.is_empty() {
                    input_trace = None;
                    own_output = None;
                }
                Ok(())
            }
        });
        Arranged { stream, trace: out_handle }
    }

    /// The number of records for each key, counting multiplicities.
    pub fn count(&self) -> Arranged<K, Diff> {
        self.reduce_core("Count", |_k, vals, out| {
            let total: Diff = vals.iter().map(|(_, d)| *d).sum();
            if total != 0 {
                out.push((total, 1));
            }
        })
    }

    /// Each value with positive multiplicity, once.
    pub fn distinct(&self) -> Arranged<K, V> {
        self.reduce_core("Distinct", |_k, vals, out| {
            out.extend(vals.iter().filter(|(_, d)| *d > 0).map(|(v, _)| (v.clone(), 1)));
        })
    }

    /// The least value with positive multiplicity.
    pub fn min(&self) -> Arranged<K, V> {
        self.reduce_core("Min", |_k, vals, out| {
            if let Some((v, _)) = vals.iter().find(|(_, d)| *d > 0) {
                out.push((v.clone(), 1));
            }
        })
    }
}
