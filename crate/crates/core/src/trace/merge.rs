use crate::data::{Data, Diff};
use crate::error::TraceError;
use crate::lattice::{rep, Antichain, Time};

use super::batch::{Columns, Description};
use super::Batch;

/// Position within one merge input: key, value, and update indices.
#[derive(Clone, Copy, Default)]
struct Position {
    key: usize,
    val: usize,
    upd: usize,
}

impl Position {
    fn exhausted<K, V>(&self, cols: &Columns<K, V>) -> bool {
        self.key >= cols.keys.len()
    }

    fn advance<K, V>(&mut self, cols: &Columns<K, V>) {
        self.upd += 1;
        if self.upd >= cols.val_offs[self.val + 1] {
            self.val += 1;
            if self.val >= cols.key_offs[self.key + 1] {
                self.key += 1;
            }
        }
    }
}

/// A resumable merge of adjacent batches, oldest first.
///
/// Each unit of fuel examines one input update. Times are compacted under the `since` frontier
/// captured when the merge began, and updates of each `(key, val)` are consolidated before
/// being appended to the output.
pub struct Merge<K, V> {
    inputs: Vec<Batch<K, V>>,
    since: Antichain,
    positions: Vec<Position>,
    output: Columns<K, V>,
    group: Option<(K, V)>,
    history: Vec<(Time, Diff)>,
    work: u64,
}

impl<K: Data, V: Data> Merge<K, V> {
    /// Panics if `inputs` is empty.
    pub fn new(inputs: Vec<Batch<K, V>>, since: Antichain) -> Self {
        assert!(!inputs.is_empty(), "a merge needs at least one input");
        let capacity = inputs.iter().map(|b| b.len()).sum();
        Merge {
            positions: vec![Position::default(); inputs.len()],
            inputs,
            since,
            output: Columns::with_capacity(capacity),
            group: None,
            history: Vec::new(),
            work: 0,
        }
    }

    pub fn inputs(&self) -> &[Batch<K, V>] {
        &self.inputs
    }

    /// Updates examined so far.
    pub fn work(&self) -> u64 {
        self.work
    }

    /// Updates written to the partial output so far.
    pub fn output_len(&self) -> usize {
        self.output.len()
    }

    pub fn lower(&self) -> &Antichain {
        self.inputs[0].lower()
    }

    pub fn upper(&self) -> &Antichain {
        self.inputs[self.inputs.len() - 1].upper()
    }

    fn flush_group(&mut self) -> Result<(), TraceError> {
        if let Some((key, val)) = self.group.take() {
            let h = &mut self.history;
            h.sort_by(|a, b| a.0.cmp(&b.0));
            let mut write = 0;
            for read in 0..h.len() {
                if write > 0 && h[write - 1].0 == h[read].0 {
                    h[write - 1].1 = h[write - 1].1.checked_add(h[read].1).ok_or(TraceError::DiffOverflow)?;
                } else {
                    if write > 0 && h[write - 1].1 == 0 {
                        write -= 1;
                    }
                    h[write] = h[read];
                    write += 1;
                }
            }
            if write > 0 && h[write - 1].1 == 0 {
                write -= 1;
            }
            h.truncate(write);
            if !h.is_empty() {
                self.output.push_group(&key, &val, h);
            }
            h.clear();
        }
        Ok(())
    }

    /// The input holding the least `(key, val)` not yet examined; ties go to the oldest.
    fn next_input(&self) -> Option<usize> {
        let mut best: Option<(usize, (&K, &V))> = None;
        for (i, (batch, pos)) in self.inputs.iter().zip(self.positions.iter()).enumerate() {
            let cols = &*batch.cols;
            if pos.exhausted(cols) {
                continue;
            }
            let kv = (&cols.keys[pos.key], &cols.vals[pos.val]);
            if best.as_ref().map_or(true, |(_, b)| kv < *b) {
                best = Some((i, kv));
            }
        }
        best.map(|(i, _)| i)
    }

    /// Spends up to `fuel` units. Returns the units spent and, on completion, the merged batch.
    pub fn step(&mut self, fuel: u64) -> Result<(u64, Option<Batch<K, V>>), TraceError> {
        let mut spent = 0;
        let compact = !self.since.is_empty();
        loop {
            let Some(i) = self.next_input() else {
                self.flush_group()?;
                let desc = Description::new(self.lower().clone(), self.upper().clone(), self.since.clone());
                let output = std::mem::replace(&mut self.output, Columns::with_capacity(0));
                return Ok((spent, Some(Batch::from_columns(desc, output.finish()))));
            };
            if spent >= fuel {
                return Ok((spent, None));
            }
            let cols = &*self.inputs[i].cols;
            let pos = &mut self.positions[i];
            let key = &cols.keys[pos.key];
            let val = &cols.vals[pos.val];
            let same = matches!(&self.group, Some((k, v)) if k == key && v == val);
            let time = if compact { rep(&self.since, &cols.times[pos.upd]) } else { cols.times[pos.upd] };
            let diff = cols.diffs[pos.upd];
            if !same {
                let (k, v) = (key.clone(), val.clone());
                pos.advance(cols);
                self.flush_group()?;
                self.group = Some((k, v));
            } else {
                pos.advance(cols);
            }
            self.history.push((time, diff));
            spent += 1;
            self.work += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Time::Scalar;
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

    fn run(mut m: Merge<char, u32>) -> Batch<char, u32> {
        loop {
            if let (_, Some(b)) = m.step(1).unwrap() {
                return b;
            }
        }
    }

    #[test]
    fn merge_cancels_under_compaction() {
        let m = Merge::new(vec![batch(&[('a', 1, 1, 1)], 0, 2), batch(&[('a', 1, 2, -1)], 2, 3)], ac(5));
        let out = run(m);
        assert!(out.is_empty());
        assert_eq!(out.description(), &Description::new(ac(0), ac(3), ac(5)));
    }

    #[test]
    fn partial_fuel_leaves_merge_in_progress() {
        let updates: Vec<_> = (0..50).map(|i| (char::from(b'a' + (i % 26) as u8), i, 1, 1)).collect();
        let more: Vec<_> = (0..50).map(|i| (char::from(b'a' + (i % 26) as u8), i, 2, 1)).collect();
        let mut m = Merge::new(vec![batch(&updates, 0, 2), batch(&more, 2, 3)], Antichain::new());
        let (spent, done) = m.step(1).unwrap();
        assert_eq!(spent, 1);
        assert!(done.is_none());
        assert_eq!(m.work(), 1);
    }

    #[test]
    fn merging_empty_batches_spans_bounds() {
        let m = Merge::new(vec![batch(&[], 0, 2), batch(&[], 2, 5)], Antichain::from_elem(Scalar(0)));
        let mut m = m;
        let (spent, done) = m.step(10).unwrap();
        assert_eq!(spent, 0);
        let out = done.unwrap();
        assert!(out.is_empty());
        assert_eq!(out.lower(), &ac(0));
        assert_eq!(out.upper(), &ac(5));
    }

    #[test]
    fn merge_interleaves_and_consolidates() {
        let l = batch(&[('a', 1, 1, 1), ('b', 2, 1, 1), ('c', 1, 0, 1)], 0, 2);
        let r = batch(&[('a', 1, 2, 1), ('b', 1, 2, 1), ('c', 1, 3, -1)], 2, 4);
        let out = run(Merge::new(vec![l.clone(), r.clone()], ac(3)));
        let mut expected = l.updates();
        expected.extend(r.updates());
        let expected = crate::trace::consolidate(expected, &ac(3)).unwrap();
        assert_eq!(out.updates(), expected);
        out.check_invariants().unwrap();
    }

    #[test]
    fn four_way_merge_matches_consolidation() {
        let inputs = vec![
            batch(&[('a', 1, 0, 1), ('c', 2, 0, 1)], 0, 1),
            batch(&[('a', 1, 1, -1), ('b', 1, 1, 2)], 1, 2),
            batch(&[], 2, 3),
            batch(&[('b', 1, 3, 1), ('c', 2, 3, -1), ('d', 4, 3, 1)], 3, 4),
        ];
        let mut expected: Vec<_> = inputs.iter().flat_map(|b| b.updates()).collect();
        expected = crate::trace::consolidate(expected, &ac(4)).unwrap();
        let out = run(Merge::new(inputs, ac(4)));
        assert_eq!(out.updates(), expected);
        assert_eq!(out.description(), &Description::new(ac(0), ac(4), ac(4)));
    }
}
