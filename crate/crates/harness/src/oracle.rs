//! Brute-force recomputation from raw updates, used to check dataflow outputs.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use shared_arrangements::data::Diff;
use shared_arrangements::lattice::Time;

pub type Multiset<D> = BTreeMap<D, Diff>;

/// The multiset of records whose update time is at or before `time`.
pub fn accumulate<D: Ord + Clone>(updates: &[(D, Time, Diff)], time: &Time) -> Multiset<D> {
    let mut acc = BTreeMap::new();
    for (d, t, r) in updates {
        if t.less_equal(time) {
            *acc.entry(d.clone()).or_insert(0) += r;
        }
    }
    acc.retain(|_, r| *r != 0);
    acc
}

/// `(key, total)` for every key whose counts sum to a non-zero total.
pub fn count<K: Ord + Clone, V>(input: &Multiset<(K, V)>) -> Multiset<(K, Diff)> {
    let mut totals: BTreeMap<K, Diff> = BTreeMap::new();
    for ((k, _), r) in input {
        *totals.entry(k.clone()).or_insert(0) += r;
    }
    totals.into_iter().filter(|(_, t)| *t != 0).map(|(k, t)| ((k, t), 1)).collect()
}

/// Every record with a positive count, once.
pub fn distinct<D: Ord + Clone>(input: &Multiset<D>) -> Multiset<D> {
    input.iter().filter(|(_, r)| **r > 0).map(|(d, _)| (d.clone(), 1)).collect()
}

/// Pairs of records with equal keys, with multiplied counts.
pub fn join<K: Ord + Clone, A: Ord + Clone, B: Ord + Clone>(a: &Multiset<(K, A)>, b: &Multiset<(K, B)>) -> Multiset<(K, (A, B))> {
    let mut by_key: BTreeMap<&K, Vec<(&B, Diff)>> = BTreeMap::new();
    for ((k, v), r) in b {
        by_key.entry(k).or_default().push((v, *r));
    }
    let mut out = BTreeMap::new();
    for ((k, va), ra) in a {
        for (vb, rb) in by_key.get(k).into_iter().flatten() {
            *out.entry((k.clone(), (va.clone(), (*vb).clone()))).or_insert(0) += ra * rb;
        }
    }
    out.retain(|_, r| *r != 0);
    out
}

/// Per key, the least value with a positive count.
pub fn min<K: Ord + Clone, V: Ord + Clone>(input: &Multiset<(K, V)>) -> Multiset<(K, V)> {
    let mut out: BTreeMap<(K, V), Diff> = BTreeMap::new();
    let mut seen: BTreeSet<K> = BTreeSet::new();
    for ((k, v), r) in input {
        if *r > 0 && seen.insert(k.clone()) {
            out.insert((k.clone(), v.clone()), 1);
        }
    }
    out
}

/// `(node, source)` for every node reachable from a source along at least one edge, treating
/// edges with positive counts as present.
pub fn reach(edges: &Multiset<(u64, u64)>, sources: &BTreeSet<u64>) -> Multiset<(u64, u64)> {
    let mut adjacency: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for ((a, b), r) in edges {
        if *r > 0 {
            adjacency.entry(*a).or_default().push(*b);
        }
    }
    let mut out = BTreeMap::new();
    for &src in sources {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<u64> = adjacency.get(&src).into_iter().flatten().copied().collect();
        while let Some(n) = queue.pop_front() {
            if seen.insert(n) {
                queue.extend(adjacency.get(&n).into_iter().flatten().copied());
            }
        }
        for n in seen {
            out.insert((n, src), 1);
        }
    }
    out
}

/// Shortest path lengths by breadth-first search, up to `limit` hops.
pub fn hops(adjacency: &BTreeMap<u64, Vec<u64>>, source: u64, limit: u64) -> BTreeMap<u64, u64> {
    let mut dist = BTreeMap::from([(source, 0)]);
    let mut queue = VecDeque::from([source]);
    while let Some(n) = queue.pop_front() {
        let d = dist[&n];
        if d == limit {
            continue;
        }
        for &m in adjacency.get(&n).into_iter().flatten() {
            dist.entry(m).or_insert_with(|| {
                queue.push_back(m);
                d + 1
            });
        }
    }
    dist
}

/// The first record on which two multisets disagree, with both counts.
pub fn first_difference<D: Ord + Clone>(got: &Multiset<D>, expected: &Multiset<D>) -> Option<(D, Diff, Diff)> {
    let keys: BTreeSet<&D> = got.keys().chain(expected.keys()).collect();
    keys.into_iter()
        .map(|d| (d.clone(), got.get(d).copied().unwrap_or(0), expected.get(d).copied().unwrap_or(0)))
        .find(|(_, g, e)| g != e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ms<D: Ord>(items: Vec<(D, Diff)>) -> Multiset<D> {
        items.into_iter().collect()
    }

    #[test]
    fn join_multiplies_counts() {
        let a = ms(vec![((1, 'a'), 2), ((2, 'b'), 1)]);
        let b = ms(vec![((1, 'x'), 3), ((1, 'y'), -1), ((3, 'z'), 1)]);
        assert_eq!(join(&a, &b), ms(vec![((1, ('a', 'x')), 6), ((1, ('a', 'y')), -2)]));
        assert!(join(&a, &ms::<(i32, char)>(vec![])).is_empty());
    }

    #[test]
    fn count_min_distinct() {
        let input = ms(vec![((1, 5), 2), ((1, 3), -1), ((2, 7), 1)]);
        assert_eq!(count(&input), ms(vec![((1, 1), 1), ((2, 1), 1)]));
        assert_eq!(min(&input), ms(vec![((1, 5), 1), ((2, 7), 1)]));
        assert_eq!(distinct(&input), ms(vec![((1, 5), 1), ((2, 7), 1)]));
    }

    #[test]
    fn reach_and_hops() {
        let edges = ms(vec![((1, 2), 1), ((2, 3), 1), ((3, 1), 1), ((4, 5), -1)]);
        let r = reach(&edges, &BTreeSet::from([1, 4]));
        assert_eq!(r, ms(vec![((1, 1), 1), ((2, 1), 1), ((3, 1), 1)]));
        let adjacency = BTreeMap::from([(1, vec![2]), (2, vec![3]), (3, vec![4])]);
        assert_eq!(hops(&adjacency, 1, 2), BTreeMap::from([(1, 0), (2, 1), (3, 2)]));
    }
}
