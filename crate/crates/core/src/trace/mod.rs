//! Immutable batches of updates and the merging, compacting trace that holds them.

mod batch;
mod cursor;
mod merge;
mod spine;

pub use batch::{Batch, BatchBuilder, Description};
pub(crate) use batch::minimal_since;
pub use cursor::{BatchCursor, Cursor, CursorList, View, ViewCursor};
pub use merge::Merge;
pub use spine::{Effort, Spine, TraceStats, INSERT_FUEL};

use crate::data::Diff;
use crate::error::TraceError;
use crate::lattice::{rep, Antichain, Time};

/// A keyed update `((key, val), time, diff)`.
pub type Update<K, V> = ((K, V), Time, Diff);

/// Sorts `updates`, sums diffs of equal `(data, time)` entries, and removes zero diffs.
pub fn consolidate_in_place<D: Ord>(updates: &mut Vec<(D, Time, Diff)>) -> Result<(), TraceError> {
    updates.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
    let mut write = 0;
    for read in 0..updates.len() {
        if write > 0 && updates[write - 1].0 == updates[read].0 && updates[write - 1].1 == updates[read].1 {
            let d = updates[read].2;
            let acc = &mut updates[write - 1].2;
            *acc = acc.checked_add(d).ok_or(TraceError::DiffOverflow)?;
        } else {
            if write > 0 && updates[write - 1].2 == 0 {
                write -= 1;
            }
            updates.swap(write, read);
            write += 1;
        }
    }
    if write > 0 && updates[write - 1].2 == 0 {
        write -= 1;
    }
    updates.truncate(write);
    Ok(())
}

/// Replaces every time by its representative under `since`, then consolidates.
pub fn consolidate<D: Ord>(mut updates: Vec<(D, Time, Diff)>, since: &Antichain) -> Result<Vec<(D, Time, Diff)>, TraceError> {
    if !since.is_empty() {
        for (_, t, _) in updates.iter_mut() {
            *t = rep(since, t);
        }
    }
    consolidate_in_place(&mut updates)?;
    Ok(updates)
}

/// Sums `(val, diff)` pairs by value, dropping zeros. Output is sorted by value.
pub fn consolidate_vals<V: Ord>(vals: &mut Vec<(V, Diff)>) -> Result<(), TraceError> {
    vals.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out: Vec<(V, Diff)> = Vec::with_capacity(vals.len());
    for (v, d) in vals.drain(..) {
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 = last.1.checked_add(d).ok_or(TraceError::DiffOverflow)?,
            _ => {
                if out.last().map_or(false, |l| l.1 == 0) {
                    out.pop();
                }
                out.push((v, d));
            }
        }
    }
    if out.last().map_or(false, |l| l.1 == 0) {
        out.pop();
    }
    *vals = out;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{grid, Time::Scalar};

    fn ac(e: u64) -> Antichain {
        Antichain::from_elem(Scalar(e))
    }

    /// Accumulates `updates` at every grid time beyond `since`.
    fn accumulations(updates: &[((u8, u8), Time, Diff)], since: &Antichain, bound: u64) -> Vec<Vec<((u8, u8), Diff)>> {
        grid(&Scalar(bound))
            .filter(|g| since.less_equal(g))
            .map(|g| {
                let mut acc: Vec<((u8, u8), Diff)> = updates.iter().filter(|u| u.1.less_equal(&g)).map(|u| (u.0, u.2)).collect();
                consolidate_vals(&mut acc).unwrap();
                acc
            })
            .collect()
    }

    #[test]
    fn consolidate_examples() {
        let kv = (1u8, 1u8);
        let cancel = vec![(kv, Scalar(1), 1), (kv, Scalar(2), -1)];
        let out = consolidate(cancel.clone(), &ac(5)).unwrap();
        assert_eq!(accumulations(&cancel, &ac(5), 12), accumulations(&out, &ac(5), 12));
        assert_eq!(out, vec![]);

        let spread = vec![(kv, Scalar(1), 1), (kv, Scalar(3), 1)];
        let out = consolidate(spread.clone(), &ac(2)).unwrap();
        assert_eq!(accumulations(&spread, &ac(2), 12), accumulations(&out, &ac(2), 12));
        assert_eq!(out, vec![(kv, Scalar(2), 1), (kv, Scalar(3), 1)]);

        assert_eq!(consolidate(Vec::<((u8, u8), Time, Diff)>::new(), &ac(9)).unwrap(), vec![]);
    }

    #[test]
    fn consolidate_overflow_is_an_error() {
        let kv = (0u8, 0u8);
        let updates = vec![(kv, Scalar(0), i64::MAX), (kv, Scalar(0), 1)];
        assert_eq!(consolidate(updates, &Antichain::new()), Err(TraceError::DiffOverflow));
    }

    #[test]
    fn consolidate_vals_drops_zeros() {
        let mut vals = vec![(3, 1), (1, 2), (3, -1), (2, 0)];
        consolidate_vals(&mut vals).unwrap();
        assert_eq!(vals, vec![(1, 2)]);
    }
}
