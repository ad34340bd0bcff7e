use std::sync::Arc;

use crate::data::{Data, Diff};
use crate::error::TraceError;
use crate::lattice::{Antichain, Shape, Time};

use super::{consolidate, Update};

/// The frontiers bounding a batch, and the compaction frontier applied to its times.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Description {
    pub lower: Antichain,
    pub upper: Antichain,
    pub since: Antichain,
}

impl Description {
    pub fn new(lower: Antichain, upper: Antichain, since: Antichain) -> Self {
        Description { lower, upper, since }
    }
}

/// Column storage: `key_offs[i]..key_offs[i+1]` indexes the values of key `i`, and
/// `val_offs[j]..val_offs[j+1]` indexes the `(time, diff)` history of value `j`.
#[derive(Debug)]
pub(crate) struct Columns<K, V> {
    pub keys: Vec<K>,
    pub key_offs: Vec<usize>,
    pub vals: Vec<V>,
    pub val_offs: Vec<usize>,
    pub times: Vec<Time>,
    pub diffs: Vec<Diff>,
}

impl<K: Data, V: Data> Columns<K, V> {
    pub fn with_capacity(updates: usize) -> Self {
        let mut key_offs = Vec::new();
        key_offs.push(0);
        let mut val_offs = Vec::with_capacity(updates + 1);
        val_offs.push(0);
        Columns {
            keys: Vec::new(),
            key_offs,
            vals: Vec::new(),
            val_offs,
            times: Vec::with_capacity(updates),
            diffs: Vec::with_capacity(updates),
        }
    }

    /// Appends a `(key, val)` group. Groups must arrive in `(key, val)` order.
    pub fn push_group(&mut self, key: &K, val: &V, history: &[(Time, Diff)]) {
        debug_assert!(!history.is_empty());
        if self.keys.last() != Some(key) {
            if !self.keys.is_empty() {
                self.key_offs.push(self.vals.len());
            }
            self.keys.push(key.clone());
        }
        self.vals.push(val.clone());
        for (t, d) in history.iter() {
            self.times.push(*t);
            self.diffs.push(*d);
        }
        self.val_offs.push(self.times.len());
    }

    pub fn finish(mut self) -> Self {
        if !self.keys.is_empty() {
            self.key_offs.push(self.vals.len());
        }
        self
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn from_sorted(updates: &[Update<K, V>]) -> Self {
        let mut cols = Columns::with_capacity(updates.len());
        let mut start = 0;
        let mut history = Vec::new();
        while start < updates.len() {
            let mut end = start;
            history.clear();
            while end < updates.len() && updates[end].0 == updates[start].0 {
                history.push((updates[end].1, updates[end].2));
                end += 1;
            }
            let (k, v) = &updates[start].0;
            cols.push_group(k, v, &history);
            start = end;
        }
        cols.finish()
    }
}

/// An immutable, indexed block of updates sorted by `(key, val, time)`.
///
/// Cloning is cheap: the columns are shared, and a clone may carry a different description
/// (used when an empty neighbour is absorbed without copying).
#[derive(Debug)]
pub struct Batch<K, V> {
    desc: Description,
    pub(crate) cols: Arc<Columns<K, V>>,
}

impl<K, V> Clone for Batch<K, V> {
    fn clone(&self) -> Self {
        Batch { desc: self.desc.clone(), cols: self.cols.clone() }
    }
}

impl<K: Data, V: Data> PartialEq for Batch<K, V> {
    fn eq(&self, other: &Self) -> bool {
        self.desc == other.desc && self.updates() == other.updates()
    }
}
impl<K: Data, V: Data> Eq for Batch<K, V> {}

impl<K: Data, V: Data> Batch<K, V> {
    pub(crate) fn from_columns(desc: Description, cols: Columns<K, V>) -> Self {
        Batch { desc, cols: Arc::new(cols) }
    }

    /// An empty batch spanning `[lower, upper)`.
    pub fn empty(lower: Antichain, upper: Antichain, since: Antichain) -> Self {
        Batch::from_columns(Description::new(lower, upper, since), Columns::with_capacity(0).finish())
    }

    /// Builds a batch from updates that are already sorted and consolidated.
    pub fn from_sorted(desc: Description, updates: &[Update<K, V>]) -> Self {
        Batch::from_columns(desc, Columns::from_sorted(updates))
    }

    pub fn description(&self) -> &Description {
        &self.desc
    }
    pub fn lower(&self) -> &Antichain {
        &self.desc.lower
    }
    pub fn upper(&self) -> &Antichain {
        &self.desc.upper
    }
    pub fn since(&self) -> &Antichain {
        &self.desc.since
    }

    /// Number of stored `(key, val, time, diff)` entries.
    pub fn len(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.len() == 0
    }

    pub fn key_count(&self) -> usize {
        self.cols.keys.len()
    }

    /// The same columns under a different description.
    pub(crate) fn with_description(&self, desc: Description) -> Self {
        Batch { desc, cols: self.cols.clone() }
    }

    /// All updates in storage order.
    pub fn updates(&self) -> Vec<Update<K, V>> {
        let c = &*self.cols;
        let mut out = Vec::with_capacity(c.len());
        for k in 0..c.keys.len() {
            for v in c.key_offs[k]..c.key_offs[k + 1] {
                for u in c.val_offs[v]..c.val_offs[v + 1] {
                    out.push(((c.keys[k].clone(), c.vals[v].clone()), c.times[u], c.diffs[u]));
                }
            }
        }
        out
    }

    /// Checks sortedness, consolidation, and time bounds. Returns a description of the first
    /// violation, naming the offending `(key, time)`.
    pub fn check_invariants(&self) -> Result<(), String> {
        let updates = self.updates();
        for w in updates.windows(2) {
            if (&w[0].0, &w[0].1) >= (&w[1].0, &w[1].1) {
                return Err(format!("entries out of order or duplicated at key {:?}, time {}", (w[1].0).0, w[1].1));
            }
        }
        for ((k, _), t, d) in updates.iter() {
            if *d == 0 {
                return Err(format!("zero diff at key {:?}, time {}", k, t));
            }
            let compacted = !self.desc.since.elements().iter().all(|s| *s == Time::minimum(s.shape()));
            if compacted {
                if crate::lattice::rep(&self.desc.since, t) != *t {
                    return Err(format!("time not compacted at key {:?}, time {}", k, t));
                }
            } else {
                if !self.desc.lower.less_equal(t) || self.desc.upper.less_equal(t) {
                    return Err(format!("time outside bounds at key {:?}, time {}", k, t));
                }
            }
        }
        Ok(())
    }
}

/// Stages updates and seals them into a [`Batch`].
pub struct BatchBuilder<K, V> {
    staged: Vec<Update<K, V>>,
}

impl<K: Data, V: Data> Default for BatchBuilder<K, V> {
    fn default() -> Self {
        BatchBuilder::new()
    }
}

impl<K: Data, V: Data> BatchBuilder<K, V> {
    pub fn new() -> Self {
        BatchBuilder { staged: Vec::new() }
    }

    pub fn with_updates(staged: Vec<Update<K, V>>) -> Self {
        BatchBuilder { staged }
    }

    pub fn push(&mut self, key: K, val: V, time: Time, diff: Diff) {
        self.staged.push(((key, val), time, diff));
    }

    pub fn len(&self) -> usize {
        self.staged.len()
    }

    pub fn is_empty(&self) -> bool {
        self.staged.is_empty()
    }

    /// Sorts and consolidates the staged updates into a batch spanning `[lower, upper)`.
    pub fn seal(self, lower: Antichain, upper: Antichain) -> Result<Batch<K, V>, TraceError> {
        for (_, t, _) in self.staged.iter() {
            if !lower.less_equal(t) || upper.less_equal(t) {
                return Err(TraceError::OutOfBounds { time: *t, lower, upper });
            }
        }
        let since = minimal_since(&lower, &upper);
        let updates = consolidate(self.staged, &Antichain::new())?;
        Ok(Batch::from_sorted(Description::new(lower, upper, since), &updates))
    }

    /// Seals without consolidating. Only used to inject faults for negative controls.
    pub fn seal_unconsolidated(mut self, lower: Antichain, upper: Antichain) -> Batch<K, V> {
        self.staged.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
        let since = minimal_since(&lower, &upper);
        Batch::from_sorted(Description::new(lower, upper, since), &self.staged)
    }
}

/// The "no compaction" frontier of whichever shape the bounds use.
pub(crate) fn minimal_since(lower: &Antichain, upper: &Antichain) -> Antichain {
    let shape = lower
        .elements()
        .first()
        .or_else(|| upper.elements().first())
        .map(|t| t.shape())
        .unwrap_or(Shape::Scalar);
    Antichain::minimum(shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Time::Scalar;

    fn ac(e: u64) -> Antichain {
        Antichain::from_elem(Scalar(e))
    }

    #[test]
    fn builder_coalesces_duplicates() {
        let mut b = BatchBuilder::new();
        b.push('k', 'v', Scalar(1), 1);
        b.push('k', 'v', Scalar(1), 1);
        let batch = b.seal(ac(0), ac(2)).unwrap();
        assert_eq!(batch.updates(), vec![(('k', 'v'), Scalar(1), 2)]);
    }

    #[test]
    fn builder_empty_and_cancelling() {
        let b: BatchBuilder<char, char> = BatchBuilder::new();
        let batch = b.seal(ac(4), ac(7)).unwrap();
        assert!(batch.is_empty());
        assert_eq!(batch.upper(), &ac(7));
        assert_eq!(batch.lower(), &ac(4));

        let mut b = BatchBuilder::new();
        b.push('k', 'v', Scalar(2), 1);
        b.push('k', 'v', Scalar(2), -1);
        assert!(b.seal(ac(0), ac(3)).unwrap().is_empty());
    }

    #[test]
    fn seal_sorts_by_key() {
        let mut b = BatchBuilder::new();
        b.push('b', 1, Scalar(3), 1);
        b.push('a', 1, Scalar(2), 1);
        let batch = b.seal(ac(2), ac(4)).unwrap();
        assert_eq!(batch.updates(), vec![(('a', 1), Scalar(2), 1), (('b', 1), Scalar(3), 1)]);
        assert_eq!(batch.key_count(), 2);
        batch.check_invariants().unwrap();
    }

    #[test]
    fn seal_rejects_out_of_bounds() {
        let mut b = BatchBuilder::new();
        b.push('a', 1, Scalar(5), 1);
        match b.seal(ac(2), ac(4)) {
            Err(TraceError::OutOfBounds { time, .. }) => assert_eq!(time, Scalar(5)),
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn unconsolidated_batch_fails_invariants() {
        let mut b = BatchBuilder::new();
        b.push('a', 1, Scalar(1), 1);
        b.push('a', 1, Scalar(1), 1);
        let batch = b.seal_unconsolidated(ac(0), ac(2));
        assert!(batch.check_invariants().is_err());
    }
}
