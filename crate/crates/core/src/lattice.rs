//! Partially ordered timestamps, antichain frontiers, and the compaction representative.
//!
//! Two shapes of time exist: `Scalar` epochs used by the root scope of every dataflow, and
//! `Product` times `(epoch, round)` used inside an iteration scope. Products are ordered
//! coordinate-wise, which makes them a lattice whose least upper bound is the coordinate-wise
//! maximum and whose greatest lower bound is the coordinate-wise minimum.
//!
//! Mixing shapes in a comparison is a contract violation. Dataflow construction checks scopes so
//! that it never happens at runtime, and the comparison functions panic if it does.

use std::fmt;

/// A logical timestamp.
///
/// The derived `Ord` is the canonical total order used for sorting inside batches: it is
/// lexicographic by coordinates and extends the partial order given by [`Time::less_equal`].
#[derive(Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Time {
    /// An epoch of the root scope.
    Scalar(u64),
    /// An `(epoch, round)` pair inside an iteration scope.
    Product(u64, u64),
}

impl fmt::Debug for Time {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Time::Scalar(e) => write!(f, "{}", e),
            Time::Product(e, r) => write!(f, "({}, {})", e, r),
        }
    }
}

impl fmt::Display for Time {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// The shape of a time: which lattice it lives in.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Shape {
    Scalar,
    Product,
}

impl Time {
    /// The minimum element of the lattice of the given shape.
    pub fn minimum(shape: Shape) -> Time {
        match shape {
            Shape::Scalar => Time::Scalar(0),
            Shape::Product => Time::Product(0, 0),
        }
    }

    pub fn shape(&self) -> Shape {
        match self {
            Time::Scalar(_) => Shape::Scalar,
            Time::Product(..) => Shape::Product,
        }
    }

    /// The outer epoch coordinate.
    pub fn epoch(&self) -> u64 {
        match *self {
            Time::Scalar(e) | Time::Product(e, _) => e,
        }
    }

    /// The iteration round, or zero for scalar times.
    pub fn round(&self) -> u64 {
        match *self {
            Time::Scalar(_) => 0,
            Time::Product(_, r) => r,
        }
    }

    /// The partial order.
    #[inline]
    pub fn less_equal(&self, other: &Time) -> bool {
        match (self, other) {
            (Time::Scalar(a), Time::Scalar(b)) => a <= b,
            (Time::Product(a1, a2), Time::Product(b1, b2)) => a1 <= b1 && a2 <= b2,
            _ => shape_mismatch(self, other),
        }
    }

    /// Strictly less in the partial order.
    #[inline]
    pub fn less_than(&self, other: &Time) -> bool {
        self != other && self.less_equal(other)
    }

    /// Least upper bound.
    #[inline]
    pub fn lub(&self, other: &Time) -> Time {
        match (self, other) {
            (Time::Scalar(a), Time::Scalar(b)) => Time::Scalar(*a.max(b)),
            (Time::Product(a1, a2), Time::Product(b1, b2)) => Time::Product(*a1.max(b1), *a2.max(b2)),
            _ => shape_mismatch(self, other),
        }
    }

    /// Greatest lower bound.
    #[inline]
    pub fn glb(&self, other: &Time) -> Time {
        match (self, other) {
            (Time::Scalar(a), Time::Scalar(b)) => Time::Scalar(*a.min(b)),
            (Time::Product(a1, a2), Time::Product(b1, b2)) => Time::Product(*a1.min(b1), *a2.min(b2)),
            _ => shape_mismatch(self, other),
        }
    }

    /// Moves a root-scope time into an iteration scope at round zero.
    pub fn enter(&self) -> Time {
        match *self {
            Time::Scalar(e) => Time::Product(e, 0),
            Time::Product(..) => panic!("contract violation: nested iteration scopes are not supported"),
        }
    }

    /// Projects an iteration-scope time back to its epoch.
    pub fn leave(&self) -> Time {
        match *self {
            Time::Product(e, _) => Time::Scalar(e),
            Time::Scalar(_) => panic!("contract violation: leaving the root scope"),
        }
    }

    /// Advances the round coordinate by one (the summary of a feedback edge).
    pub fn next_round(&self) -> Time {
        match *self {
            Time::Product(e, r) => Time::Product(e, r + 1),
            Time::Scalar(_) => panic!("contract violation: feedback outside an iteration scope"),
        }
    }
}

#[cold]
fn shape_mismatch(a: &Time, b: &Time) -> ! {
    panic!("contract violation: comparing times of different shapes ({:?} and {:?})", a, b)
}

/// A set of mutually incomparable times.
///
/// Elements are kept sorted in the canonical total order so that equal antichains compare equal.
/// The empty antichain is a frontier beyond which no time lies: a closed input.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Antichain {
    elements: Vec<Time>,
}

impl fmt::Debug for Antichain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.elements.iter()).finish()
    }
}

impl fmt::Display for Antichain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl Antichain {
    /// The empty antichain.
    pub fn new() -> Self {
        Antichain { elements: Vec::new() }
    }

    pub fn from_elem(time: Time) -> Self {
        Antichain { elements: vec![time] }
    }

    /// The frontier containing only the minimum time of `shape`.
    pub fn minimum(shape: Shape) -> Self {
        Antichain::from_elem(Time::minimum(shape))
    }

    pub fn elements(&self) -> &[Time] {
        &self.elements
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    /// Inserts `time` unless some element is already less or equal to it, removing any elements
    /// that `time` dominates. Returns true if the antichain changed.
    pub fn insert(&mut self, time: Time) -> bool {
        if self.elements.iter().any(|e| e.less_equal(&time)) {
            return false;
        }
        self.elements.retain(|e| !time.less_equal(e));
        let pos = self.elements.binary_search(&time).unwrap_or_else(|p| p);
        self.elements.insert(pos, time);
        true
    }

    /// True iff some element is less or equal to `time`; that is, `time` is beyond this frontier.
    #[inline]
    pub fn less_equal(&self, time: &Time) -> bool {
        self.elements.iter().any(|e| e.less_equal(time))
    }

    /// True iff some element is strictly less than `time`.
    pub fn less_than(&self, time: &Time) -> bool {
        self.elements.iter().any(|e| e.less_than(time))
    }

    /// Frontier order: true iff every time beyond `other` is also beyond `self`.
    ///
    /// This is how compaction frontiers are checked for advancement: `old.dominated_by(new)`.
    pub fn dominated_by(&self, other: &Antichain) -> bool {
        other.elements.iter().all(|t| self.less_equal(t))
    }

    /// The frontier whose beyond-set is the union of both beyond-sets.
    pub fn meet(&self, other: &Antichain) -> Antichain {
        let mut result = self.clone();
        for t in other.elements.iter() {
            result.insert(*t);
        }
        result
    }

    /// The frontier whose beyond-set is the intersection of both beyond-sets.
    pub fn join(&self, other: &Antichain) -> Antichain {
        let mut result = Antichain::new();
        for a in self.elements.iter() {
            for b in other.elements.iter() {
                result.insert(a.lub(b));
            }
        }
        result
    }

    /// Applies `f` to every element, collecting the minimal results.
    pub fn map(&self, f: impl Fn(&Time) -> Time) -> Antichain {
        self.elements.iter().map(f).collect()
    }

    /// The single element of a frontier over a totally ordered shape.
    pub fn as_option(&self) -> Option<&Time> {
        debug_assert!(self.elements.len() <= 1);
        self.elements.first()
    }
}

impl FromIterator<Time> for Antichain {
    fn from_iter<I: IntoIterator<Item = Time>>(iter: I) -> Self {
        let mut result = Antichain::new();
        for t in iter {
            result.insert(t);
        }
        result
    }
}

impl From<Vec<Time>> for Antichain {
    fn from(times: Vec<Time>) -> Self {
        times.into_iter().collect()
    }
}

/// True iff `time` is greater or equal to some element of `frontier`.
pub fn beyond(time: &Time, frontier: &Antichain) -> bool {
    frontier.less_equal(time)
}

/// The minimal antichain of `frontier ∪ {time}`.
pub fn frontier_insert(frontier: &Antichain, time: Time) -> Antichain {
    let mut result = frontier.clone();
    result.insert(time);
    result
}

/// The compaction representative of `time` as of `frontier`: the greatest lower bound, over
/// frontier elements `f`, of `lub(time, f)`.
///
/// For every `g` beyond `frontier`, `time <= g` iff `rep(frontier, time) <= g`, and any two times
/// that compare identically against all such `g` share a representative. The empty frontier
/// permits no compaction and maps every time to itself.
pub fn rep(frontier: &Antichain, time: &Time) -> Time {
    let mut iter = frontier.elements().iter();
    match iter.next() {
        None => *time,
        Some(first) => iter.fold(time.lub(first), |acc, f| acc.glb(&time.lub(f))),
    }
}

/// Enumerates every time of `bound`'s shape that is less or equal to `bound`.
pub fn grid(bound: &Time) -> Box<dyn Iterator<Item = Time>> {
    match *bound {
        Time::Scalar(b) => Box::new((0..=b).map(Time::Scalar)),
        Time::Product(b1, b2) => Box::new((0..=b1).flat_map(move |x| (0..=b2).map(move |y| Time::Product(x, y)))),
    }
}

/// Grid oracle for indistinguishability as of `frontier`.
///
/// `t1` and `t2` are indistinguishable when every `f` beyond `frontier` satisfies
/// `t1 <= f` iff `t2 <= f`. The quantifier ranges over the grid below `bound`, which callers
/// choose to dominate every coordinate involved plus a margin.
pub fn indistinguishable(frontier: &Antichain, t1: &Time, t2: &Time, bound: &Time) -> bool {
    grid(bound)
        .filter(|f| beyond(f, frontier))
        .all(|f| t1.less_equal(&f) == t2.less_equal(&f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(e: u64) -> Time {
        Time::Scalar(e)
    }
    fn p(e: u64, r: u64) -> Time {
        Time::Product(e, r)
    }
    fn ac(times: &[Time]) -> Antichain {
        times.iter().copied().collect()
    }

    #[test]
    fn order_examples() {
        assert!(s(3).less_equal(&s(5)));
        assert!(!p(1, 3).less_equal(&p(2, 0)));
        assert!(p(1, 0).less_equal(&p(1, 0)));
    }

    #[test]
    fn lub_glb_examples() {
        assert_eq!(s(3).lub(&s(5)), s(5));
        assert_eq!(p(1, 3).lub(&p(2, 0)), p(2, 3));
        assert_eq!(p(1, 1).lub(&p(1, 1)), p(1, 1));
        assert_eq!(s(3).glb(&s(5)), s(3));
        assert_eq!(p(1, 3).glb(&p(2, 0)), p(1, 0));
        assert_eq!(p(0, 0).glb(&p(7, 9)), p(0, 0));
    }

    #[test]
    fn beyond_examples() {
        assert!(beyond(&s(5), &ac(&[s(3)])));
        assert!(!beyond(&p(1, 0), &ac(&[p(0, 1)])));
        assert!(!beyond(&s(0), &Antichain::new()));
    }

    #[test]
    fn frontier_insert_examples() {
        assert_eq!(frontier_insert(&ac(&[p(0, 2)]), p(2, 0)).elements(), &[p(0, 2), p(2, 0)]);
        assert_eq!(frontier_insert(&ac(&[p(1, 1)]), p(3, 3)).elements(), &[p(1, 1)]);
        assert_eq!(frontier_insert(&ac(&[p(1, 1)]), p(0, 0)).elements(), &[p(0, 0)]);
    }

    #[test]
    fn rep_examples() {
        assert_eq!(rep(&ac(&[s(0)]), &s(7)), s(7));
        assert_eq!(rep(&ac(&[s(5)]), &s(3)), s(5));
        assert_eq!(rep(&ac(&[p(1, 1)]), &p(0, 3)), p(1, 3));
        assert_eq!(rep(&ac(&[p(2, 0), p(0, 2)]), &p(1, 1)), p(1, 1));
        assert_eq!(rep(&Antichain::new(), &p(4, 2)), p(4, 2));
    }

    #[test]
    fn indistinguishable_examples() {
        assert!(indistinguishable(&ac(&[s(5)]), &s(1), &s(3), &s(20)));
        assert!(!indistinguishable(&ac(&[s(5)]), &s(3), &s(7), &s(20)));
        assert!(indistinguishable(&ac(&[p(1, 1)]), &p(0, 3), &p(1, 3), &p(8, 8)));
    }

    #[test]
    fn antichain_frontier_order() {
        let old = ac(&[s(3)]);
        assert!(old.dominated_by(&ac(&[s(5)])));
        assert!(!ac(&[s(5)]).dominated_by(&old));
        assert!(old.dominated_by(&Antichain::new()));
        let f = ac(&[p(0, 2), p(2, 0)]);
        assert!(f.dominated_by(&ac(&[p(2, 2)])));
        assert!(!f.dominated_by(&ac(&[p(1, 1)])));
        assert_eq!(f.meet(&ac(&[p(1, 1)])).elements(), &[p(0, 2), p(1, 1), p(2, 0)]);
        assert_eq!(f.join(&ac(&[p(1, 1)])).elements(), &[p(1, 2), p(2, 1)]);
    }

    #[test]
    #[should_panic(expected = "different shapes")]
    fn mixed_shapes_panic() {
        s(1).less_equal(&p(1, 1));
    }
}
