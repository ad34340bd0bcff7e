//! `graph`: interactive queries against an evolving graph.
//!
//! Query arguments are collections: adding an argument installs a standing query, removing it
//! retracts the answers. In shared mode every query dataflow imports the same two edge
//! arrangements, by source and by target; otherwise each query arranges the edges itself.

use std::collections::{BTreeMap, VecDeque};
use std::rc::Rc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shared_arrangements::arrange::{Arranged, TraceHandle};
use shared_arrangements::collection::{Captured, Collection, InputSession};
use shared_arrangements::data::Diff;
use shared_arrangements::dataflow::{execute, Config, ProbeHandle, Scope};
use shared_arrangements::error::DataflowError;
use shared_arrangements::lattice::{Antichain, Time};
use shared_arrangements::trace::{consolidate, TraceStats};

use super::{nanos, Schedule, EPOCH};
use crate::edges::Edge;
use crate::latency::LatencyRecorder;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QueryClass {
    Lookup,
    OneHop,
    TwoHop,
    FourPath,
}

impl QueryClass {
    pub const ALL: [QueryClass; 4] = [QueryClass::Lookup, QueryClass::OneHop, QueryClass::TwoHop, QueryClass::FourPath];

    pub fn name(&self) -> &'static str {
        match self {
            QueryClass::Lookup => "lookup",
            QueryClass::OneHop => "one-hop",
            QueryClass::TwoHop => "two-hop",
            QueryClass::FourPath => "four-path",
        }
    }

    /// Whether the query reads the edges by source and by target.
    fn needs(&self) -> (bool, bool) {
        match self {
            QueryClass::FourPath => (true, true),
            _ => (true, false),
        }
    }
}

impl std::str::FromStr for QueryClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        QueryClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown query class {:?}; expected lookup, one-hop, two-hop or four-path", s))
    }
}

/// Query arguments: a node, or a `(source, target)` pair for four-path (the second field is 0
/// for the other classes).
pub type Arg = (u64, u64);
/// Answer rows `(arg0, arg1, value)`: the out-degree for look-ups, a neighbour for the hop
/// queries, and the shortest path length for four-path.
pub type Row = (u64, u64, u64);

#[derive(Clone, Debug)]
pub struct GraphConfig {
    pub workers: usize,
    pub nodes: u64,
    pub edges: Vec<Edge>,
    pub queries: Vec<QueryClass>,
    /// Graph changes per second; each replaces a random edge by a new random edge.
    pub update_rate: u64,
    /// Query argument changes per second, divided evenly between the query classes.
    pub query_rate: u64,
    pub duration: Duration,
    pub share: bool,
    /// Standing arguments per class that the generator aims to keep installed.
    pub arguments: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Default)]
pub struct GraphReport {
    pub latency: LatencyRecorder,
    /// `(trace_name, resident_updates, resident_batches)`, summed over workers.
    pub memory: Vec<(String, usize, usize)>,
    /// Consolidated answer history per query class.
    pub outputs: BTreeMap<QueryClass, Vec<(Row, Time, Diff)>>,
    pub graph_updates_sent: u64,
    pub query_updates_sent: u64,
}

impl GraphReport {
    /// Traces holding edges, with their resident update counts.
    pub fn graph_traces(&self) -> Vec<(String, usize)> {
        self.memory
            .iter()
            .filter(|(n, u, _)| (n.ends_with("/forward") || n.ends_with("/reverse")) && *u > 0)
            .map(|(n, u, _)| (n.clone(), *u))
            .collect()
    }

    pub fn resident_graph_updates(&self) -> usize {
        self.graph_traces().iter().map(|(_, u)| u).sum()
    }

    /// The answers of `class` accumulated at `time`.
    pub fn answers_at(&self, class: QueryClass, time: &Time) -> BTreeMap<Row, Diff> {
        let mut acc = BTreeMap::new();
        for (row, t, r) in self.outputs.get(&class).map_or(&[][..], |v| v.as_slice()) {
            if t.less_equal(time) {
                *acc.entry(*row).or_insert(0) += r;
            }
        }
        acc.retain(|_, r| *r != 0);
        acc
    }
}

struct GraphGen {
    rng: ChaCha8Rng,
    nodes: u64,
    edges: Vec<Edge>,
}

impl GraphGen {
    /// Returns the added and the removed edge.
    fn change(&mut self) -> (Edge, Option<Edge>) {
        let fresh = (self.rng.gen_range(0..self.nodes), self.rng.gen_range(0..self.nodes));
        if self.edges.is_empty() {
            self.edges.push(fresh);
            return (fresh, None);
        }
        let i = self.rng.gen_range(0..self.edges.len());
        (fresh, Some(std::mem::replace(&mut self.edges[i], fresh)))
    }
}

struct QueryGen {
    rng: ChaCha8Rng,
    nodes: u64,
    classes: Vec<QueryClass>,
    pools: Vec<Vec<Arg>>,
    target: usize,
}

impl QueryGen {
    fn change(&mut self, i: u64) -> (usize, Arg, Diff) {
        let c = i as usize % self.classes.len();
        let pool = &mut self.pools[c];
        if pool.len() < self.target.max(1) && (pool.is_empty() || self.rng.gen_bool(0.5)) {
            let a = self.rng.gen_range(0..self.nodes);
            let arg = match self.classes[c] {
                QueryClass::FourPath => (a, self.rng.gen_range(0..self.nodes)),
                _ => (a, 0),
            };
            pool.push(arg);
            (c, arg, 1)
        } else {
            let j = self.rng.gen_range(0..pool.len());
            (c, pool.swap_remove(j), -1)
        }
    }
}

/// The dataflow answering `class` for the arguments in `args`.
pub fn query(class: QueryClass, args: &Collection<Arg>, forward: Option<&Arranged<u64, u64>>, reverse: Option<&Arranged<u64, u64>>) -> Collection<Row> {
    let forward = forward.expect("every query reads edges by source");
    match class {
        QueryClass::Lookup => args
            .map(|(q, _)| (q, ()))
            .arrange_by_key()
            .join_core(forward, |q, _, _| Some(*q))
            .arrange_by_self()
            .count()
            .as_collection(|q, c| (*q, 0, *c as u64)),
        QueryClass::OneHop => args
            .map(|(q, _)| (q, ()))
            .arrange_by_key()
            .join_core(forward, |q, _, d| Some((*q, 0, *d)))
            .arrange_by_self()
            .distinct()
            .as_collection(|r, _| *r),
        QueryClass::TwoHop => args
            .map(|(q, _)| (q, ()))
            .arrange_by_key()
            .join_core(forward, |q, _, mid| Some((*mid, *q)))
            .arrange_by_key()
            .join_core(forward, |_mid, q, d| Some((*q, 0, *d)))
            .arrange_by_self()
            .distinct()
            .as_collection(|r, _| *r),
        QueryClass::FourPath => {
            // Two hops out of the source meet two hops into the target: every path of length at
            // most four has a node at distance at most two from both ends.
            let reverse = reverse.expect("four-path reads edges by target");
            let from_source = within_two(args.map(|q| (q.0, q)), forward);
            let to_target = within_two(args.map(|q| (q.1, q)), reverse);
            from_source
                .join_core(&to_target, |(_, q), a, b| Some((*q, a + b)))
                .arrange_by_key()
                .min()
                .as_collection(|q, d| (q.0, q.1, *d))
        }
    }
}

/// `((node, query), d)` with `d` the least number of `edges` hops, at most two, from the
/// query's start node to `node`.
fn within_two(starts: Collection<(u64, Arg)>, edges: &Arranged<u64, u64>) -> Arranged<(u64, Arg), u64> {
    let one = starts.arrange_by_key().join_core(edges, |_, q, n| Some((*n, *q)));
    let two = one.arrange_by_key().join_core(edges, |_, q, n| Some((*n, *q)));
    starts
        .map(|p| (p, 0))
        .concat(&one.map(|p| (p, 1)))
        .concat(&two.map(|p| (p, 2)))
        .arrange_by_key()
        .min()
}

struct QueryDataflow {
    class: QueryClass,
    edges: Option<InputSession<Edge>>,
    args: InputSession<Arg>,
    captured: Captured<Row>,
    probe: ProbeHandle,
    traces: Vec<(String, Rc<TraceStats>)>,
    pending: VecDeque<(u64, Instant)>,
}

fn private_query(scope: &Scope, class: QueryClass) -> QueryDataflow {
    let (edges, graph) = InputSession::<Edge>::new(scope);
    let (fw, rv) = class.needs();
    let forward = fw.then(|| graph.arrange_named(&format!("{}/forward", class.name())));
    let reverse = rv.then(|| graph.map(|(s, d)| (d, s)).arrange_named(&format!("{}/reverse", class.name())));
    let traces = forward.iter().chain(reverse.iter()).map(|a| (a.trace.name(), a.trace.stats())).collect();
    let (args, arg_collection) = InputSession::<Arg>::new(scope);
    let out = query(class, &arg_collection, forward.as_ref(), reverse.as_ref());
    QueryDataflow { class, edges: Some(edges), args, captured: out.capture(), probe: out.probe(), traces, pending: VecDeque::new() }
}

pub fn run_graph(config: &GraphConfig) -> Result<GraphReport, DataflowError> {
    if config.nodes == 0 {
        return Err(DataflowError::Input("graph must have at least one node".into()));
    }
    if config.queries.is_empty() {
        return Err(DataflowError::Input("no query classes selected".into()));
    }
    let graph_schedule = Schedule { rate: config.update_rate };
    let query_schedule = Schedule { rate: config.query_rate };
    let epochs = (config.duration.as_millis() as u64).max(1);
    let results = execute(Config::workers(config.workers), |worker| {
        let (index, peers) = (worker.index(), worker.peers());
        let mut graph_gen =
            GraphGen { rng: ChaCha8Rng::seed_from_u64(config.seed), nodes: config.nodes, edges: config.edges.clone() };
        let mut query_gen = QueryGen {
            rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1)),
            nodes: config.nodes,
            classes: config.queries.clone(),
            pools: vec![Vec::new(); config.queries.len()],
            target: config.arguments,
        };

        let mut shared: Option<Shared> = None;
        let mut queries: Vec<QueryDataflow> = Vec::new();
        if config.share {
            let (edges, forward, reverse) = worker.dataflow(|scope| {
                let (edges, graph) = InputSession::<Edge>::new(scope);
                let forward = graph.arrange_named("graph/forward");
                let reverse = graph.map(|(s, d)| (d, s)).arrange_named("graph/reverse");
                (edges, forward.trace, reverse.trace)
            })?;
            for &class in config.queries.iter() {
                let q = worker.dataflow(|scope| {
                    let (fw, rv) = class.needs();
                    let f = fw.then(|| forward.import(scope));
                    let r = rv.then(|| reverse.import(scope));
                    let (args, arg_collection) = InputSession::<Arg>::new(scope);
                    let out = query(class, &arg_collection, f.as_ref(), r.as_ref());
                    QueryDataflow {
                        class,
                        edges: None,
                        args,
                        captured: out.capture(),
                        probe: out.probe(),
                        traces: Vec::new(),
                        pending: VecDeque::new(),
                    }
                })?;
                queries.push(q);
            }
            shared = Some((edges, forward, reverse));
        } else {
            for &class in config.queries.iter() {
                queries.push(worker.dataflow(|scope| private_query(scope, class))?);
            }
        }

        for (i, e) in config.edges.iter().enumerate() {
            if i % peers == index {
                send_edge(shared.as_mut().map(|s| &mut s.0), &mut queries, *e, 1)?;
            }
        }

        // The initial graph is loaded at epoch 0; timed epochs start at 1.
        advance(shared.as_mut(), &mut queries, 1, None)?;
        for q in queries.iter() {
            let probe = q.probe.clone();
            worker.step_while(|| probe.less_equal(&Time::Scalar(0)))?;
        }

        let mut latency = LatencyRecorder::new();
        let start = Instant::now();
        let (mut graph_sent, mut query_sent) = (0u64, 0u64);
        for e in 0..epochs {
            let due_at = start + EPOCH * (e as u32 + 1);
            while Instant::now() < due_at {
                worker.step()?;
                record_completed(&mut queries, &mut latency);
                if queries.iter().all(|q| q.pending.is_empty()) {
                    std::thread::yield_now();
                }
            }
            for i in graph_schedule.due(e) {
                let (added, removed) = graph_gen.change();
                if i as usize % peers == index {
                    send_edge(shared.as_mut().map(|s| &mut s.0), &mut queries, added, 1)?;
                    if let Some(removed) = removed {
                        send_edge(shared.as_mut().map(|s| &mut s.0), &mut queries, removed, -1)?;
                    }
                }
                graph_sent += 1;
            }
            for i in query_schedule.due(e) {
                let (c, arg, r) = query_gen.change(i);
                if i as usize % peers == index {
                    queries[c].args.update(arg, r)?;
                }
                query_sent += 1;
            }
            advance(shared.as_mut(), &mut queries, e + 2, Some(due_at))?;
            worker.step()?;
            record_completed(&mut queries, &mut latency);
        }
        while queries.iter().any(|q| !q.pending.is_empty()) {
            worker.step()?;
            record_completed(&mut queries, &mut latency);
        }

        let mut memory: Vec<(String, usize, usize)> = Vec::new();
        if let Some((_, forward, reverse)) = shared.as_ref() {
            for t in [forward, reverse] {
                memory.push((t.name(), t.resident_updates(), t.live_batches()));
            }
        }
        for q in queries.iter() {
            for (name, stats) in q.traces.iter() {
                memory.push((name.clone(), stats.resident_updates.get(), stats.live_batches.get()));
            }
        }

        if let Some((edges, _, _)) = shared.as_mut() {
            edges.close()?;
        }
        for q in queries.iter_mut() {
            if let Some(edges) = q.edges.as_mut() {
                edges.close()?;
            }
            q.args.close()?;
        }
        drop(shared);
        for q in queries.iter() {
            let probe = q.probe.clone();
            worker.step_while(|| !probe.done())?;
        }
        let outputs: Vec<(QueryClass, Vec<(Row, Time, Diff)>)> =
            queries.iter().map(|q| (q.class, q.captured.borrow().clone())).collect();
        Ok((latency, memory, outputs, graph_sent, query_sent))
    })?;

    let mut report = GraphReport::default();
    let mut outputs: BTreeMap<QueryClass, Vec<(Row, Time, Diff)>> = BTreeMap::new();
    for (latency, memory, outs, graph_sent, query_sent) in results {
        report.latency.merge(latency);
        for (name, u, b) in memory {
            match report.memory.iter_mut().find(|(n, _, _)| *n == name) {
                Some(row) => {
                    row.1 += u;
                    row.2 += b;
                }
                None => report.memory.push((name, u, b)),
            }
        }
        for (class, rows) in outs {
            outputs.entry(class).or_default().extend(rows);
        }
        report.graph_updates_sent = graph_sent;
        report.query_updates_sent = query_sent;
    }
    for (class, rows) in outputs {
        report.outputs.insert(class, consolidate(rows, &Antichain::new())?);
    }
    Ok(report)
}

type Shared = (InputSession<Edge>, TraceHandle<u64, u64>, TraceHandle<u64, u64>);

fn send_edge(shared: Option<&mut InputSession<Edge>>, queries: &mut [QueryDataflow], e: Edge, r: Diff) -> Result<(), DataflowError> {
    if let Some(edges) = shared {
        edges.update(e, r)?;
    }
    for q in queries.iter_mut() {
        if let Some(edges) = q.edges.as_mut() {
            edges.update(e, r)?;
        }
    }
    Ok(())
}

/// Moves every input to `epoch`, releasing the shared traces up to it. With `due`, the epoch
/// before it is queued for latency measurement.
fn advance(shared: Option<&mut Shared>, queries: &mut [QueryDataflow], epoch: u64, due: Option<Instant>) -> Result<(), DataflowError> {
    let frontier = Antichain::from_elem(Time::Scalar(epoch));
    if let Some((edges, forward, reverse)) = shared {
        edges.advance_to(epoch)?;
        forward.set_since(frontier.clone())?;
        reverse.set_since(frontier)?;
    }
    for q in queries.iter_mut() {
        if let Some(edges) = q.edges.as_mut() {
            edges.advance_to(epoch)?;
        }
        q.args.advance_to(epoch)?;
        if let Some(at) = due {
            q.pending.push_back((epoch - 1, at));
        }
    }
    Ok(())
}

fn record_completed(queries: &mut [QueryDataflow], latency: &mut LatencyRecorder) {
    let now = Instant::now();
    for q in queries.iter_mut() {
        while let Some(&(epoch, at)) = q.pending.front() {
            if q.probe.less_equal(&Time::Scalar(epoch)) {
                break;
            }
            latency.record(q.class.name(), nanos(now.saturating_duration_since(at)));
            q.pending.pop_front();
        }
    }
}
