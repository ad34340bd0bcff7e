//! Pointstamp accounting and frontier computation.
//!
//! Every outstanding capability (at an operator output) and every in-flight message (at an
//! operator input) is a pointstamp `(location, time)` with a count. Workers broadcast count
//! changes to each other; each worker sums them and derives, for every operator input, the
//! antichain of times that could still arrive there by following edges and operator summaries.

use std::collections::HashMap;

use crate::lattice::{Antichain, Time};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Port {
    /// An operator output, where capabilities live.
    Source(usize),
    /// An operator input, where messages wait.
    Target(usize),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Location {
    pub node: usize,
    pub port: Port,
}

impl Location {
    pub fn source(node: usize) -> Self {
        Location { node, port: Port::Source(0) }
    }
    pub fn target(node: usize, input: usize) -> Self {
        Location { node, port: Port::Target(input) }
    }
}

/// How an operator input's times map to its output's times.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Summary {
    Identity,
    /// Root scope into an iteration scope: `e -> (e, 0)`.
    Enter,
    /// Iteration scope back to the root scope: `(e, r) -> e`.
    Leave,
    /// A feedback edge: `(e, r) -> (e, r + 1)`.
    Increment,
}

impl Summary {
    pub fn apply(&self, time: &Time) -> Time {
        match self {
            Summary::Identity => *time,
            Summary::Enter => time.enter(),
            Summary::Leave => time.leave(),
            Summary::Increment => time.next_round(),
        }
    }
}

/// A list of pointstamp count changes.
#[derive(Clone, Debug, Default)]
pub struct ChangeBatch {
    updates: Vec<((Location, Time), i64)>,
}

impl ChangeBatch {
    pub fn new() -> Self {
        ChangeBatch { updates: Vec::new() }
    }

    pub fn update(&mut self, location: Location, time: Time, delta: i64) {
        self.updates.push(((location, time), delta));
        if self.updates.len() > 1024 && self.updates.len().is_power_of_two() {
            self.compact();
        }
    }

    pub fn compact(&mut self) {
        if self.updates.len() > 1 {
            self.updates.sort_by(|a, b| a.0.cmp(&b.0));
            let mut out: Vec<((Location, Time), i64)> = Vec::with_capacity(self.updates.len());
            for (k, d) in self.updates.drain(..) {
                match out.last_mut() {
                    Some(last) if last.0 == k => last.1 += d,
                    _ => out.push((k, d)),
                }
            }
            out.retain(|x| x.1 != 0);
            self.updates = out;
        } else {
            self.updates.retain(|x| x.1 != 0);
        }
    }

    pub fn is_empty(&mut self) -> bool {
        self.compact();
        self.updates.is_empty()
    }

    /// Removes and returns all changes, compacted.
    pub fn take(&mut self) -> Vec<((Location, Time), i64)> {
        self.compact();
        std::mem::take(&mut self.updates)
    }
}

/// Shape of the dataflow graph relevant to progress: per-node input summaries and output edges.
/// Every node has at most one output.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    /// `summaries[node][input]`: how times at that input reach the node's output, if at all.
    pub summaries: Vec<Vec<Option<Summary>>>,
    /// `edges[node]`: the `(node, input)` targets fed by the node's output.
    pub edges: Vec<Vec<(usize, usize)>>,
}

/// Accumulated pointstamp counts for one dataflow, as seen by one worker.
#[derive(Default)]
pub struct Tracker {
    counts: HashMap<(Location, Time), i64>,
    dirty: bool,
}

impl Tracker {
    pub fn new() -> Self {
        Tracker { counts: HashMap::new(), dirty: true }
    }

    pub fn update(&mut self, location: Location, time: Time, delta: i64) {
        if delta == 0 {
            return;
        }
        let entry = self.counts.entry((location, time)).or_insert(0);
        *entry += delta;
        if *entry == 0 {
            self.counts.remove(&(location, time));
        }
        self.dirty = true;
    }

    pub fn apply(&mut self, changes: &[((Location, Time), i64)]) {
        for &((l, t), d) in changes {
            self.update(l, t, d);
        }
    }

    /// True once no capability or message remains anywhere.
    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn take_dirty(&mut self) -> bool {
        std::mem::replace(&mut self.dirty, false)
    }

    /// For every node input, the antichain of times that may still arrive there.
    ///
    /// Only positive counts are pointstamps. Transiently negative counts arise when one worker
    /// hears of a message's consumption before its production; the producer's capability is
    /// still counted until its own changes arrive, so ignoring them is safe.
    pub fn frontiers(&self, graph: &Graph) -> Vec<Vec<Antichain>> {
        let mut targets: Vec<Vec<Antichain>> = graph.summaries.iter().map(|s| vec![Antichain::new(); s.len()]).collect();
        let mut sources: Vec<Antichain> = vec![Antichain::new(); graph.edges.len()];
        let mut work: Vec<(Location, Time)> = self.counts.iter().filter(|(_, &c)| c > 0).map(|(&(l, t), _)| (l, t)).collect();
        // Process smaller times first so that dominated times are rejected early.
        work.sort_by(|a, b| b.1.cmp(&a.1));
        while let Some((loc, time)) = work.pop() {
            match loc.port {
                Port::Target(i) => {
                    if targets[loc.node][i].insert(time) {
                        if let Some(summary) = graph.summaries[loc.node][i] {
                            work.push((Location::source(loc.node), summary.apply(&time)));
                        }
                    }
                }
                Port::Source(_) => {
                    if sources[loc.node].insert(time) {
                        for &(n, i) in graph.edges[loc.node].iter() {
                            work.push((Location::target(n, i), time));
                        }
                    }
                }
            }
        }
        targets
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Time::{Product, Scalar};

    #[test]
    fn change_batch_compacts() {
        let mut b = ChangeBatch::new();
        let l = Location::source(0);
        b.update(l, Scalar(1), 1);
        b.update(l, Scalar(1), -1);
        assert!(b.is_empty());
        b.update(l, Scalar(2), 2);
        assert_eq!(b.take(), vec![((l, Scalar(2)), 2)]);
    }

    #[test]
    fn frontier_follows_summaries_around_a_loop() {
        // 0: input (root) -> 1: enter -> 2: concat <- 3: feedback <- 2; 2 -> 4: leave -> 5: probe
        let graph = Graph {
            summaries: vec![
                vec![],
                vec![Some(Summary::Enter)],
                vec![Some(Summary::Identity), Some(Summary::Identity)],
                vec![Some(Summary::Increment)],
                vec![Some(Summary::Leave)],
                vec![None],
            ],
            edges: vec![vec![(1, 0)], vec![(2, 0)], vec![(3, 0), (4, 0)], vec![(2, 1)], vec![(5, 0)], vec![]],
        };
        let mut tracker = Tracker::new();
        tracker.update(Location::source(0), Scalar(3), 1);
        tracker.update(Location::source(2), Product(2, 5), 1);
        let f = tracker.frontiers(&graph);
        assert_eq!(f[2][1].elements(), &[Product(2, 6), Product(3, 1)]);
        assert_eq!(f[2][0].elements(), &[Product(3, 0)]);
        assert_eq!(f[5][0].elements(), &[Scalar(2)]);
        tracker.update(Location::source(2), Product(2, 5), -1);
        let f = tracker.frontiers(&graph);
        assert_eq!(f[5][0].elements(), &[Scalar(3)]);
        tracker.update(Location::source(0), Scalar(3), -1);
        assert!(tracker.is_empty());
        assert!(tracker.frontiers(&graph)[5][0].is_empty());
    }
}
