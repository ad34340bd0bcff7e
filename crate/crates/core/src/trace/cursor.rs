use std::rc::Rc;

use crate::data::{Data, Diff};
use crate::lattice::Time;

use super::Batch;

/// Ordered navigation over `(key, val, history)` triples.
///
/// Keys ascend in canonical order, and values ascend within each key. Accessors on an exhausted
/// cursor are contract violations and panic.
pub trait Cursor<K, V> {
    fn key_valid(&self) -> bool;
    fn val_valid(&self) -> bool;
    fn key(&self) -> &K;
    fn val(&self) -> &V;
    /// Visits each `(time, diff)` of the current `(key, val)`, in time order per batch.
    fn map_times<F: FnMut(&Time, Diff)>(&mut self, f: F);
    fn step_key(&mut self);
    /// Positions at the first key greater or equal to `key`.
    fn seek_key(&mut self, key: &K);
    fn step_val(&mut self);
    fn seek_val(&mut self, val: &V);
    fn rewind_vals(&mut self);
    /// Number of positional moves made, counting every probe of a seek.
    fn advances(&self) -> u64;
}

/// Galloping search: the least `i >= start` with `!less(i)`, assuming `less` is monotone.
/// Each probe is counted in `probes`.
fn gallop(start: usize, end: usize, probes: &mut u64, mut less: impl FnMut(usize) -> bool) -> usize {
    let mut lo = start;
    if lo >= end {
        return end;
    }
    *probes += 1;
    if !less(lo) {
        return lo;
    }
    let mut step = 1;
    while lo + step < end {
        *probes += 1;
        if less(lo + step) {
            lo += step;
            step <<= 1;
        } else {
            break;
        }
    }
    // Invariant: less(lo) holds, and the answer lies in (lo, min(lo + step, end)].
    let mut hi = (lo + step).min(end);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        *probes += 1;
        if less(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// A cursor over a single batch.
pub struct BatchCursor<K, V> {
    batch: Batch<K, V>,
    key_pos: usize,
    val_pos: usize,
    advances: u64,
}

impl<K: Data, V: Data> BatchCursor<K, V> {
    pub fn new(batch: Batch<K, V>) -> Self {
        let mut cursor = BatchCursor { batch, key_pos: 0, val_pos: 0, advances: 0 };
        cursor.rewind_vals();
        cursor
    }

    pub fn batch(&self) -> &Batch<K, V> {
        &self.batch
    }

    fn val_range(&self) -> (usize, usize) {
        let c = &self.batch.cols;
        (c.key_offs[self.key_pos], c.key_offs[self.key_pos + 1])
    }
}

impl<K: Data, V: Data> Cursor<K, V> for BatchCursor<K, V> {
    fn key_valid(&self) -> bool {
        self.key_pos < self.batch.cols.keys.len()
    }
    fn val_valid(&self) -> bool {
        self.key_valid() && self.val_pos < self.val_range().1
    }
    fn key(&self) -> &K {
        &self.batch.cols.keys[self.key_pos]
    }
    fn val(&self) -> &V {
        assert!(self.val_valid(), "contract violation: val accessed on exhausted cursor");
        &self.batch.cols.vals[self.val_pos]
    }
    fn map_times<F: FnMut(&Time, Diff)>(&mut self, mut f: F) {
        assert!(self.val_valid(), "contract violation: times accessed on exhausted cursor");
        let c = &self.batch.cols;
        for u in c.val_offs[self.val_pos]..c.val_offs[self.val_pos + 1] {
            f(&c.times[u], c.diffs[u]);
        }
    }
    fn step_key(&mut self) {
        if self.key_valid() {
            self.advances += 1;
            self.key_pos += 1;
            self.rewind_vals();
        }
    }
    fn seek_key(&mut self, key: &K) {
        let keys = &self.batch.cols.keys;
        let pos = gallop(self.key_pos, keys.len(), &mut self.advances, |i| &keys[i] < key);
        if pos != self.key_pos {
            self.key_pos = pos;
            self.rewind_vals();
        }
    }
    fn step_val(&mut self) {
        if self.val_valid() {
            self.advances += 1;
            self.val_pos += 1;
        }
    }
    fn seek_val(&mut self, val: &V) {
        if self.key_valid() {
            let end = self.val_range().1;
            let vals = &self.batch.cols.vals;
            self.val_pos = gallop(self.val_pos, end, &mut self.advances, |i| &vals[i] < val);
        }
    }
    fn rewind_vals(&mut self) {
        if self.key_valid() {
            self.val_pos = self.val_range().0;
        }
    }
    fn advances(&self) -> u64 {
        self.advances
    }
}

/// A merged view over several cursors. Histories of equal `(key, val)` pairs are concatenated.
pub struct CursorList<C> {
    cursors: Vec<C>,
    // Indices of cursors positioned at the minimum key, and of those at the minimum value.
    min_key: Vec<usize>,
    min_val: Vec<usize>,
}

impl<C> CursorList<C> {
    pub fn new<K: Data, V: Data>(cursors: Vec<C>) -> Self
    where
        C: Cursor<K, V>,
    {
        let mut list = CursorList { cursors, min_key: Vec::new(), min_val: Vec::new() };
        list.minimize_keys::<K, V>();
        list
    }

    pub fn len(&self) -> usize {
        self.cursors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cursors.is_empty()
    }

    fn minimize_keys<K: Data, V: Data>(&mut self)
    where
        C: Cursor<K, V>,
    {
        self.min_key.clear();
        let mut best: Option<&K> = None;
        for (i, c) in self.cursors.iter().enumerate() {
            if c.key_valid() {
                match best {
                    Some(b) if c.key() > b => {}
                    Some(b) if c.key() == b => self.min_key.push(i),
                    _ => {
                        best = Some(c.key());
                        self.min_key.clear();
                        self.min_key.push(i);
                    }
                }
            }
        }
        self.minimize_vals::<K, V>();
    }

    fn minimize_vals<K: Data, V: Data>(&mut self)
    where
        C: Cursor<K, V>,
    {
        self.min_val.clear();
        let mut best: Option<&V> = None;
        for &i in self.min_key.iter() {
            let c = &self.cursors[i];
            if c.val_valid() {
                match best {
                    Some(b) if c.val() > b => {}
                    Some(b) if c.val() == b => self.min_val.push(i),
                    _ => {
                        best = Some(c.val());
                        self.min_val.clear();
                        self.min_val.push(i);
                    }
                }
            }
        }
    }
}

impl<K: Data, V: Data, C: Cursor<K, V>> Cursor<K, V> for CursorList<C> {
    fn key_valid(&self) -> bool {
        !self.min_key.is_empty()
    }
    fn val_valid(&self) -> bool {
        !self.min_val.is_empty()
    }
    fn key(&self) -> &K {
        self.cursors[self.min_key[0]].key()
    }
    fn val(&self) -> &V {
        self.cursors[self.min_val[0]].val()
    }
    fn map_times<F: FnMut(&Time, Diff)>(&mut self, mut f: F) {
        for &i in self.min_val.iter() {
            self.cursors[i].map_times(&mut f);
        }
    }
    fn step_key(&mut self) {
        for &i in self.min_key.iter() {
            self.cursors[i].step_key();
        }
        self.minimize_keys::<K, V>();
    }
    fn seek_key(&mut self, key: &K) {
        for c in self.cursors.iter_mut() {
            c.seek_key(key);
        }
        self.minimize_keys::<K, V>();
    }
    fn step_val(&mut self) {
        for &i in self.min_val.iter() {
            self.cursors[i].step_val();
        }
        self.minimize_vals::<K, V>();
    }
    fn seek_val(&mut self, val: &V) {
        for &i in self.min_key.iter() {
            self.cursors[i].seek_val(val);
        }
        self.minimize_vals::<K, V>();
    }
    fn rewind_vals(&mut self) {
        for &i in self.min_key.iter() {
            self.cursors[i].rewind_vals();
        }
        self.minimize_vals::<K, V>();
    }
    fn advances(&self) -> u64 {
        self.cursors.iter().map(|c| c.advances()).sum()
    }
}

/// A predicate on `(key, val)` pairs.
pub type Filter<K, V> = Rc<dyn Fn(&K, &V) -> bool>;

/// How a reader sees an underlying trace: optionally entered into an iteration scope, and
/// restricted by filters. Views transform navigation only; no data is copied.
pub struct View<K, V> {
    pub entered: bool,
    pub filters: Vec<Filter<K, V>>,
}

impl<K, V> Clone for View<K, V> {
    fn clone(&self) -> Self {
        View { entered: self.entered, filters: self.filters.clone() }
    }
}

impl<K, V> Default for View<K, V> {
    fn default() -> Self {
        View { entered: false, filters: Vec::new() }
    }
}

impl<K, V> View<K, V> {
    pub fn is_identity(&self) -> bool {
        !self.entered && self.filters.is_empty()
    }

    pub fn admits(&self, key: &K, val: &V) -> bool {
        self.filters.iter().all(|f| f(key, val))
    }

    /// Maps an underlying time into the reader's scope.
    pub fn map_time(&self, time: &Time) -> Time {
        if self.entered {
            time.enter()
        } else {
            *time
        }
    }

    /// Maps a frontier in the reader's scope back to the underlying trace's times.
    pub fn unmap_frontier(&self, frontier: &crate::lattice::Antichain) -> crate::lattice::Antichain {
        if self.entered {
            frontier.map(|t| t.leave())
        } else {
            frontier.clone()
        }
    }
}

impl<K: Data, V: Data> View<K, V> {
    /// A cursor over `batch` as seen through this view.
    pub fn batch_cursor(&self, batch: &Batch<K, V>) -> ViewCursor<K, V, BatchCursor<K, V>> {
        ViewCursor::new(BatchCursor::new(batch.clone()), self.clone())
    }
}

/// Applies a [`View`] to another cursor.
pub struct ViewCursor<K, V, C> {
    inner: C,
    view: View<K, V>,
}

impl<K: Data, V: Data, C: Cursor<K, V>> ViewCursor<K, V, C> {
    pub fn new(inner: C, view: View<K, V>) -> Self {
        let mut cursor = ViewCursor { inner, view };
        cursor.skip_keys();
        cursor
    }

    pub fn into_inner(self) -> C {
        self.inner
    }

    fn skip_vals(&mut self) {
        if self.view.filters.is_empty() {
            return;
        }
        while self.inner.val_valid() && !self.view.admits(self.inner.key(), self.inner.val()) {
            self.inner.step_val();
        }
    }

    fn skip_keys(&mut self) {
        if self.view.filters.is_empty() {
            return;
        }
        while self.inner.key_valid() {
            self.skip_vals();
            if self.inner.val_valid() {
                return;
            }
            self.inner.step_key();
        }
    }
}

impl<K: Data, V: Data, C: Cursor<K, V>> Cursor<K, V> for ViewCursor<K, V, C> {
    fn key_valid(&self) -> bool {
        self.inner.key_valid()
    }
    fn val_valid(&self) -> bool {
        self.inner.val_valid()
    }
    fn key(&self) -> &K {
        self.inner.key()
    }
    fn val(&self) -> &V {
        self.inner.val()
    }
    fn map_times<F: FnMut(&Time, Diff)>(&mut self, mut f: F) {
        if self.view.entered {
            self.inner.map_times(|t, d| f(&t.enter(), d));
        } else {
            self.inner.map_times(f);
        }
    }
    fn step_key(&mut self) {
        self.inner.step_key();
        self.skip_keys();
    }
    fn seek_key(&mut self, key: &K) {
        self.inner.seek_key(key);
        self.skip_keys();
    }
    fn step_val(&mut self) {
        self.inner.step_val();
        self.skip_vals();
    }
    fn seek_val(&mut self, val: &V) {
        self.inner.seek_val(val);
        self.skip_vals();
    }
    fn rewind_vals(&mut self) {
        self.inner.rewind_vals();
        self.skip_vals();
    }
    fn advances(&self) -> u64 {
        self.inner.advances()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Antichain, Time::Scalar};
    use crate::trace::BatchBuilder;

    fn ac(e: u64) -> Antichain {
        Antichain::from_elem(Scalar(e))
    }

    fn batch(updates: &[(char, u32, u64, i64)], lower: u64, upper: u64) -> Batch<char, u32> {
        let mut b = BatchBuilder::new();
        for &(k, v, t, d) in updates {
            b.push(k, v, Scalar(t), d);
        }
        b.seal(ac(lower), ac(upper)).unwrap()
    }

    fn drain<C: Cursor<char, u32>>(c: &mut C) -> Vec<(char, u32, Vec<(Time, Diff)>)> {
        let mut out = Vec::new();
        while c.key_valid() {
            while c.val_valid() {
                let mut h = Vec::new();
                c.map_times(|t, d| h.push((*t, d)));
                out.push((*c.key(), *c.val(), h));
                c.step_val();
            }
            c.step_key();
        }
        out
    }

    #[test]
    fn list_concatenates_histories() {
        let b1 = batch(&[('a', 1, 1, 1)], 0, 2);
        let b2 = batch(&[('a', 1, 3, -1)], 2, 4);
        let mut list = CursorList::new(vec![BatchCursor::new(b1), BatchCursor::new(b2)]);
        assert_eq!(drain(&mut list), vec![('a', 1, vec![(Scalar(1), 1), (Scalar(3), -1)])]);
    }

    #[test]
    fn empty_list_has_no_keys() {
        let list: CursorList<BatchCursor<char, u32>> = CursorList::new(vec![]);
        assert!(!list.key_valid());
    }

    #[test]
    fn seek_positions_at_next_key() {
        let b = batch(&[('a', 1, 1, 1), ('c', 1, 1, 1)], 0, 2);
        let mut c = BatchCursor::new(b.clone());
        c.seek_key(&'b');
        assert_eq!(*c.key(), 'c');
        c.seek_key(&'c');
        assert_eq!(*c.key(), 'c');
        c.seek_key(&'z');
        assert!(!c.key_valid());

        let mut c = BatchCursor::new(b);
        c.seek_key(&'a');
        assert_eq!(*c.key(), 'a');
    }

    #[test]
    fn map_times_visits_history_in_order() {
        let b = batch(&[('k', 1, 3, 1), ('k', 1, 1, 1), ('k', 1, 2, 1)], 0, 4);
        let mut c = BatchCursor::new(b);
        let mut seen = Vec::new();
        c.map_times(|t, _| seen.push(*t));
        assert_eq!(seen, vec![Scalar(1), Scalar(2), Scalar(3)]);
    }

    #[test]
    fn gallop_counts_logarithmic_probes() {
        let mut probes = 0;
        let pos = gallop(0, 1 << 20, &mut probes, |i| i < 1000);
        assert_eq!(pos, 1000);
        assert!(probes <= 2 * 20 + 2, "{} probes", probes);
    }

    #[test]
    fn view_filters_and_enters() {
        let b = batch(&[('a', 1, 1, 1), ('a', 2, 1, 1), ('b', 1, 2, 1)], 0, 3);
        let view = View { entered: true, filters: vec![Rc::new(|_k: &char, v: &u32| *v == 2) as Filter<char, u32>] };
        let mut c = ViewCursor::new(BatchCursor::new(b.clone()), view);
        assert_eq!(drain(&mut c), vec![('a', 2, vec![(Time::Product(1, 0), 1)])]);

        let none = View { entered: false, filters: vec![Rc::new(|_k: &char, _v: &u32| false) as Filter<char, u32>] };
        let c = ViewCursor::new(BatchCursor::new(b), none);
        assert!(!c.key_valid());
    }
}
