//! `datalog-tc`: semi-naive reachability from a set of sources.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use shared_arrangements::collection::{Collection, InputSession};
use shared_arrangements::dataflow::{execute, Config};
use shared_arrangements::error::DataflowError;

use crate::edges::Edge;

/// `(node, source)` for every node reachable from `source` along at least one edge.
pub fn reach(edges: &Collection<Edge>, sources: &Collection<u64>) -> Collection<(u64, u64)> {
    let edges = edges.arrange_by_key();
    let first = sources.map(|s| (s, s)).arrange_by_key().join_core(&edges, |_s, src, dst| Some((*dst, *src)));
    first.iterate(|reach| {
        let edges = edges.enter(reach.scope());
        reach
            .arrange_by_key()
            .join_core(&edges, |_n, src, dst| Some((*dst, *src)))
            .concat(reach)
            .arrange_by_self()
            .distinct()
            .as_collection(|k, _| *k)
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TcReport {
    /// Reachable node count per source, in the order given.
    pub reachable: Vec<(u64, usize)>,
    pub elapsed: Duration,
}

pub fn datalog_tc(workers: usize, edges: &[Edge], sources: &[u64]) -> Result<TcReport, DataflowError> {
    let start = Instant::now();
    let results = execute(Config::workers(workers), |worker| {
        let (index, peers) = (worker.index(), worker.peers());
        let (mut e_in, mut s_in, captured, probe) = worker.dataflow(|scope| {
            let (e_in, edges) = InputSession::<Edge>::new(scope);
            let (s_in, sources) = InputSession::<u64>::new(scope);
            let out = reach(&edges, &sources);
            (e_in, s_in, out.capture(), out.probe())
        })?;
        for (i, e) in edges.iter().enumerate() {
            if i % peers == index {
                e_in.insert(*e)?;
            }
        }
        for (i, s) in sources.iter().enumerate() {
            if i % peers == index {
                s_in.insert(*s)?;
            }
        }
        e_in.close()?;
        s_in.close()?;
        worker.step_while(|| !probe.done())?;
        let out = captured.borrow().clone();
        Ok(out)
    })?;
    let mut counts: BTreeMap<(u64, u64), i64> = BTreeMap::new();
    for ((node, src), _, r) in results.into_iter().flatten() {
        *counts.entry((src, node)).or_insert(0) += r;
    }
    let mut per_source: BTreeMap<u64, usize> = BTreeMap::new();
    for ((src, _), r) in counts {
        if r > 0 {
            *per_source.entry(src).or_insert(0) += 1;
        }
    }
    let reachable = sources.iter().map(|s| (*s, per_source.get(s).copied().unwrap_or(0))).collect();
    Ok(TcReport { reachable, elapsed: start.elapsed() })
}
