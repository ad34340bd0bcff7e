use std::cell::Cell;
use std::rc::Rc;

use crate::data::Data;
use crate::error::TraceError;
use crate::lattice::{Antichain, Shape};

use super::batch::Description;
use super::cursor::{BatchCursor, CursorList};
use super::{Batch, Merge};

/// How much merge work an insertion may perform, per inserted update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Effort {
    /// Complete every merge immediately.
    Eager,
    /// One unit per inserted update.
    Lazy,
    Factor(u64),
}

impl Default for Effort {
    fn default() -> Self {
        Effort::Factor(8)
    }
}

/// Fuel credited to each insertion regardless of its size, so that streams of tiny or empty
/// batches still make merge progress.
pub const INSERT_FUEL: u64 = 64;

/// Batches smaller than this merge in pairs, and larger ones four at a time. Merging four at a
/// time visits each update once per factor of four in size, which a bounded effort of about
/// eight per update can afford. Below it the per-insert fuel pays for the extra levels.
pub const SMALL_BATCH: u64 = 64;

/// A batch's level: the logarithm of its length, in base 2 below [`SMALL_BATCH`] and in base 4
/// above.
pub fn level(len: usize) -> u32 {
    let len = len.max(1) as u64;
    if len < SMALL_BATCH {
        len.ilog2()
    } else {
        SMALL_BATCH.ilog2() + (len / SMALL_BATCH).ilog(4)
    }
}

/// The number of adjacent batches at `level` that merge into one.
pub fn arity(level: u32) -> usize {
    if level < SMALL_BATCH.ilog2() {
        2
    } else {
        4
    }
}

impl Effort {
    pub fn factor(&self) -> Option<u64> {
        match self {
            Effort::Eager => None,
            Effort::Lazy => Some(1),
            Effort::Factor(n) => Some(*n),
        }
    }

    /// The fuel granted to an insertion of `len` updates.
    pub fn budget(&self, len: usize) -> u64 {
        match self.factor() {
            None => u64::MAX,
            Some(n) => n.saturating_mul(len as u64).saturating_add(INSERT_FUEL),
        }
    }
}

impl std::str::FromStr for Effort {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "eager" => Ok(Effort::Eager),
            "lazy" => Ok(Effort::Lazy),
            n => match n.parse::<u64>() {
                Ok(0) | Err(_) => Err(format!("merge effort must be eager, lazy, or a positive integer; got {:?}", s)),
                Ok(n) => Ok(Effort::Factor(n)),
            },
        }
    }
}

/// Instrumentation shared between a trace and whoever observes it. Counters outlive the trace,
/// and the resident counts drop to zero when it is released.
#[derive(Default, Debug)]
pub struct TraceStats {
    pub inserts: Cell<u64>,
    pub merge_work: Cell<u64>,
    pub last_insert_work: Cell<u64>,
    pub max_insert_work: Cell<u64>,
    /// Largest `work - effort * len` excess observed over all insertions.
    pub max_insert_excess: Cell<i64>,
    pub live_batches: Cell<usize>,
    pub max_live_batches: Cell<usize>,
    pub resident_updates: Cell<usize>,
    pub max_resident_updates: Cell<usize>,
    pub merges_started: Cell<u64>,
    pub merges_completed: Cell<u64>,
    /// Number of distinct writers that have mutated the trace.
    pub writers: Cell<u64>,
}

enum Entry<K, V> {
    Complete(Batch<K, V>),
    Merging(Box<Merge<K, V>>),
}

impl<K: Data, V: Data> Entry<K, V> {
    fn complete(&self) -> Option<&Batch<K, V>> {
        match self {
            Entry::Complete(b) => Some(b),
            Entry::Merging(_) => None,
        }
    }
}

/// The multiversioned trace: a contiguous sequence of batches with amortized background merges.
///
/// A batch's [`level`] is the logarithm of its size. Whenever [`arity`] adjacent
/// complete batches share a level they are merged, and a complete batch absorbs an older
/// neighbour of lower level, so levels never increase from older to newer batches and there are
/// logarithmically many batches. Each insertion grants fuel proportional to its size,
/// spent on in-progress merges from newest to oldest, so that small merges finish promptly and
/// feed larger ones. Merges are never forced to complete.
pub struct Spine<K, V> {
    entries: Vec<Entry<K, V>>,
    upper: Antichain,
    since: Antichain,
    physical: Option<Antichain>,
    effort: Effort,
    stats: Rc<TraceStats>,
}

impl<K: Data, V: Data> Spine<K, V> {
    pub fn new(shape: Shape, effort: Effort) -> Self {
        Spine::with_stats(shape, effort, Rc::new(TraceStats::default()))
    }

    pub fn with_stats(shape: Shape, effort: Effort, stats: Rc<TraceStats>) -> Self {
        Spine {
            entries: Vec::new(),
            upper: Antichain::minimum(shape),
            since: Antichain::minimum(shape),
            physical: None,
            effort,
            stats,
        }
    }

    pub fn stats(&self) -> &Rc<TraceStats> {
        &self.stats
    }
    pub fn upper(&self) -> &Antichain {
        &self.upper
    }
    pub fn since(&self) -> &Antichain {
        &self.since
    }
    pub fn effort(&self) -> Effort {
        self.effort
    }

    /// Advances the logical compaction frontier. Future merges compact under it.
    pub fn set_since(&mut self, since: Antichain) -> Result<(), TraceError> {
        if !self.since.dominated_by(&since) {
            return Err(TraceError::SinceRetreat { current: self.since.clone(), requested: since });
        }
        self.since = since;
        Ok(())
    }

    /// Restricts merges to batches whose upper is not past `physical`, preserving the batch
    /// boundary that readers use to exclude newer data. `None` lifts the restriction.
    pub fn set_physical(&mut self, physical: Option<Antichain>) {
        self.physical = physical;
    }

    fn mergeable(&self, upper: &Antichain) -> bool {
        self.physical.as_ref().map_or(true, |p| upper.dominated_by(p))
    }

    /// Appends `batch`, which must begin where the trace ends, and performs bounded merge work.
    pub fn insert(&mut self, batch: Batch<K, V>) -> Result<(), TraceError> {
        if batch.lower() != &self.upper {
            return Err(TraceError::Discontiguous { expected: self.upper.clone(), found: batch.lower().clone() });
        }
        self.upper = batch.upper().clone();
        let len = batch.len();
        self.entries.push(Entry::Complete(batch));
        let work = self.maintain(self.effort.budget(len))?;

        let s = &self.stats;
        s.inserts.set(s.inserts.get() + 1);
        s.last_insert_work.set(work);
        s.max_insert_work.set(s.max_insert_work.get().max(work));
        if let Some(n) = self.effort.factor() {
            let excess = work as i64 - (n as i64).saturating_mul(len as i64);
            s.max_insert_excess.set(s.max_insert_excess.get().max(excess));
        }
        self.update_stats();
        Ok(())
    }

    /// Performs merge maintenance with `fuel` units. Returns the units spent.
    pub fn maintain(&mut self, mut fuel: u64) -> Result<u64, TraceError> {
        let mut spent = 0;
        loop {
            let mut changed = self.absorb_empty();
            changed |= self.start_merges();
            for index in (0..self.entries.len()).rev() {
                if fuel == 0 {
                    break;
                }
                if let Entry::Merging(merge) = &mut self.entries[index] {
                    let (used, done) = merge.step(fuel)?;
                    fuel -= used;
                    spent += used;
                    if let Some(batch) = done {
                        self.entries[index] = Entry::Complete(batch);
                        self.stats.merges_completed.set(self.stats.merges_completed.get() + 1);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        self.stats.merge_work.set(self.stats.merge_work.get() + spent);
        self.update_stats();
        Ok(spent)
    }

    /// Folds empty complete batches into a complete neighbour by widening its description.
    fn absorb_empty(&mut self) -> bool {
        let mut changed = false;
        let mut index = 0;
        while index < self.entries.len() {
            let empty = matches!(self.entries[index].complete(), Some(b) if b.is_empty());
            if empty && self.entries.len() > 1 {
                let next = self.entries.get(index + 1).and_then(|e| e.complete());
                let prev = if index > 0 { self.entries[index - 1].complete() } else { None };
                let e = self.entries[index].complete().expect("complete");
                if let Some(next) = next.filter(|n| self.mergeable(n.upper())) {
                    let desc = Description::new(e.lower().clone(), next.upper().clone(), next.since().clone());
                    let widened = next.with_description(desc);
                    self.entries[index + 1] = Entry::Complete(widened);
                    self.entries.remove(index);
                    changed = true;
                    continue;
                }
                if let Some(prev) = prev.filter(|_| self.mergeable(e.upper())) {
                    let desc = Description::new(prev.lower().clone(), e.upper().clone(), prev.since().clone());
                    let widened = prev.with_description(desc);
                    self.entries[index - 1] = Entry::Complete(widened);
                    self.entries.remove(index);
                    changed = true;
                    continue;
                }
            }
            index += 1;
        }
        changed
    }

    /// Replaces `entries[start..end]`, all complete, with a merge of them.
    fn merge_range(&mut self, start: usize, end: usize) {
        let inputs: Vec<Batch<K, V>> = self
            .entries
            .drain(start..end)
            .map(|e| match e {
                Entry::Complete(b) => b,
                Entry::Merging(_) => unreachable!("only complete batches are merged"),
            })
            .collect();
        let merge = Merge::new(inputs, self.since.clone());
        self.entries.insert(start, Entry::Merging(Box::new(merge)));
        self.stats.merges_started.set(self.stats.merges_started.get() + 1);
    }

    /// Starts merges newest first: a complete batch with an older complete neighbour of lower
    /// level absorbs it, and [`arity`] adjacent complete batches of one level merge.
    fn start_merges(&mut self) -> bool {
        let mut changed = false;
        let mut end = self.entries.len();
        while end >= 2 {
            let newest = self.entries[end - 1].complete().filter(|b| self.mergeable(b.upper())).map(|b| level(b.len()));
            let older = self.entries[end - 2].complete().map(|b| level(b.len()));
            let Some(l) = newest else {
                end -= 1;
                continue;
            };
            let arity = arity(l);
            let window = &self.entries[end.saturating_sub(arity)..end];
            if window.len() == arity && window.iter().all(|e| e.complete().is_some_and(|b| level(b.len()) == l)) {
                self.merge_range(end - arity, end);
                changed = true;
                end -= arity;
            } else if older.is_some_and(|o| o < l) {
                self.merge_range(end - 2, end);
                changed = true;
                end -= 2;
            } else {
                end -= 1;
            }
        }
        changed
    }

    fn update_stats(&self) {
        let live = self.live_batches();
        let resident = self.resident_updates();
        let s = &self.stats;
        s.live_batches.set(live);
        s.max_live_batches.set(s.max_live_batches.get().max(live));
        s.resident_updates.set(resident);
        s.max_resident_updates.set(s.max_resident_updates.get().max(resident));
    }

    /// Complete batches plus every input of every in-progress merge.
    pub fn live_batches(&self) -> usize {
        self.entries
            .iter()
            .map(|e| match e {
                Entry::Complete(_) => 1,
                Entry::Merging(m) => m.inputs().len(),
            })
            .sum()
    }

    /// Updates held in storage, including partial merge outputs.
    pub fn resident_updates(&self) -> usize {
        self.entries
            .iter()
            .map(|e| match e {
                Entry::Complete(b) => b.len(),
                Entry::Merging(m) => m.inputs().iter().map(|b| b.len()).sum::<usize>() + m.output_len(),
            })
            .sum()
    }

    /// Every stored batch, oldest first; an in-progress merge contributes its inputs.
    pub fn batches(&self) -> Vec<Batch<K, V>> {
        let mut out = Vec::with_capacity(self.entries.len() + 4);
        for e in self.entries.iter() {
            match e {
                Entry::Complete(b) => out.push(b.clone()),
                Entry::Merging(m) => out.extend(m.inputs().iter().cloned()),
            }
        }
        out
    }

    /// A cursor over every stored update.
    pub fn cursor(&self) -> CursorList<BatchCursor<K, V>> {
        CursorList::new(self.batches().into_iter().map(BatchCursor::new).collect())
    }

    /// A cursor over the batches ending at or before `upper`, if some batch boundary equals it.
    pub fn cursor_through(&self, upper: &Antichain) -> Option<CursorList<BatchCursor<K, V>>> {
        let batches = self.batches();
        let lower = batches.first().map_or(&self.upper, |b| b.lower());
        if lower == upper {
            return Some(CursorList::new(Vec::new()));
        }
        let mut cursors = Vec::new();
        for b in batches {
            let done = b.upper() == upper;
            cursors.push(BatchCursor::new(b));
            if done {
                return Some(CursorList::new(cursors));
            }
        }
        None
    }

    /// The latest batch boundary that is not past `frontier`.
    pub fn latest_boundary(&self, frontier: &Antichain) -> Option<Antichain> {
        let mut best = None;
        for b in self.batches() {
            if b.upper().dominated_by(frontier) {
                best = Some(b.upper().clone());
            }
        }
        best
    }
}

impl<K, V> Drop for Spine<K, V> {
    fn drop(&mut self) {
        self.stats.resident_updates.set(0);
        self.stats.live_batches.set(0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Time::Scalar;
    use crate::trace::{BatchBuilder, Cursor};

    fn ac(e: u64) -> Antichain {
        Antichain::from_elem(Scalar(e))
    }

    fn unit(key: u32, epoch: u64) -> Batch<u32, ()> {
        let mut b = BatchBuilder::new();
        b.push(key, (), Scalar(epoch), 1);
        b.seal(ac(epoch), ac(epoch + 1)).unwrap()
    }

    fn empty(lower: u64, upper: u64) -> Batch<u32, ()> {
        BatchBuilder::new().seal(ac(lower), ac(upper)).unwrap()
    }

    #[test]
    fn eager_settles_to_one_batch() {
        let mut spine = Spine::new(Shape::Scalar, Effort::Eager);
        for i in 0..8 {
            spine.insert(unit(i, i as u64)).unwrap();
        }
        assert_eq!(spine.live_batches(), 1);
        assert_eq!(spine.resident_updates(), 8);
        // The merges of a merge sort: each update is examined once at each of three levels.
        assert_eq!(spine.stats().merge_work.get(), 24);
    }

    #[test]
    fn discontiguous_insert_is_an_error() {
        let mut spine: Spine<u32, ()> = Spine::new(Shape::Scalar, Effort::default());
        match spine.insert(empty(3, 4)) {
            Err(TraceError::Discontiguous { expected, found }) => {
                assert_eq!(expected, ac(0));
                assert_eq!(found, ac(3));
            }
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn empty_insert_advances_upper_without_work() {
        let mut spine: Spine<u32, ()> = Spine::new(Shape::Scalar, Effort::default());
        spine.insert(empty(0, 1)).unwrap();
        spine.insert(empty(1, 5)).unwrap();
        assert_eq!(spine.upper(), &ac(5));
        assert_eq!(spine.stats().merge_work.get(), 0);
        assert_eq!(spine.live_batches(), 1);
    }

    #[test]
    fn since_cannot_retreat() {
        let mut spine: Spine<u32, ()> = Spine::new(Shape::Scalar, Effort::default());
        spine.set_since(ac(5)).unwrap();
        spine.set_since(ac(5)).unwrap();
        assert!(matches!(spine.set_since(ac(3)), Err(TraceError::SinceRetreat { .. })));
    }

    #[test]
    fn compaction_cancels_on_merge() {
        let mut spine = Spine::new(Shape::Scalar, Effort::Eager);
        let mut b = BatchBuilder::new();
        b.push(1u32, (), Scalar(1), 1);
        spine.insert(empty(0, 1)).unwrap();
        spine.insert(b.seal(ac(1), ac(2)).unwrap()).unwrap();
        spine.set_since(ac(5)).unwrap();
        let mut b = BatchBuilder::new();
        b.push(1u32, (), Scalar(2), -1);
        spine.insert(b.seal(ac(2), ac(3)).unwrap()).unwrap();
        assert_eq!(spine.resident_updates(), 0);
    }

    #[test]
    fn cursor_through_respects_physical_frontier() {
        let mut spine = Spine::new(Shape::Scalar, Effort::Eager);
        spine.set_physical(Some(ac(1)));
        for i in 0..4 {
            spine.insert(unit(i, i as u64)).unwrap();
        }
        // Only batches ending at or before {1} may merge, so the boundary at {1} survives.
        let mut c = spine.cursor_through(&ac(1)).expect("boundary");
        let mut keys = Vec::new();
        while c.key_valid() {
            keys.push(*c.key());
            c.step_key();
        }
        assert_eq!(keys, vec![0]);
        assert!(spine.cursor_through(&ac(0)).is_some());
        assert_eq!(spine.latest_boundary(&ac(3)), Some(ac(3)));
    }

    #[test]
    fn churn_stays_compact() {
        // Every record lives for 32 epochs; at most 3,300 are live at once.
        let mut spine: Spine<(u64, u64), ()> = Spine::new(Shape::Scalar, Effort::default());
        let mut max = 0;
        for e in 0..2000u64 {
            let mut b = BatchBuilder::new();
            for i in 0..100 {
                b.push((e, i), (), Scalar(e), 1);
                if e >= 32 {
                    b.push((e - 32, i), (), Scalar(e), -1);
                }
            }
            spine.set_since(ac(e)).unwrap();
            spine.insert(b.seal(ac(e), ac(e + 1)).unwrap()).unwrap();
            max = max.max(spine.resident_updates());
        }
        assert!(max <= 20_000, "resident peaked at {}", max);
    }
}

