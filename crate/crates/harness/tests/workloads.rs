use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use harness::edges::{random_graph, Edge};
use harness::oracle;
use harness::workloads::arrange::{bench_arrange, ArrangeConfig};
use harness::workloads::graph::{query, run_graph, Arg, GraphConfig, QueryClass, Row};
use harness::workloads::join::{bench_join, JoinConfig};
use harness::workloads::tc::datalog_tc;
use shared_arrangements::collection::InputSession;
use shared_arrangements::dataflow::{execute, Config};
use shared_arrangements::lattice::{Antichain, Time};
use shared_arrangements::trace::{consolidate, Effort};

/// Answers of `class` for `args` on a static graph, summed over workers.
fn answers(workers: usize, edges: &[Edge], class: QueryClass, args: &[Arg]) -> BTreeSet<Row> {
    let out = execute(Config::workers(workers), |worker| {
        let (index, peers) = (worker.index(), worker.peers());
        let (mut e_in, mut a_in, captured, probe) = worker.dataflow(|scope| {
            let (e_in, graph) = InputSession::<Edge>::new(scope);
            let forward = graph.arrange_by_key();
            let reverse = graph.map(|(s, d)| (d, s)).arrange_by_key();
            let (a_in, args) = InputSession::<Arg>::new(scope);
            let out = query(class, &args, Some(&forward), Some(&reverse));
            (e_in, a_in, out.capture(), out.probe())
        })?;
        for (i, e) in edges.iter().enumerate() {
            if i % peers == index {
                e_in.insert(*e)?;
            }
        }
        for (i, a) in args.iter().enumerate() {
            if i % peers == index {
                a_in.insert(*a)?;
            }
        }
        e_in.close()?;
        a_in.close()?;
        worker.step_while(|| !probe.done())?;
        let out = captured.borrow().clone();
        Ok(out)
    })
    .unwrap();
    let all = consolidate(out.into_iter().flatten().map(|(r, _, d)| (r, Time::Scalar(0), d)).collect(), &Antichain::new()).unwrap();
    for (row, _, d) in all.iter() {
        assert_eq!(*d, 1, "row {:?} has multiplicity {}", row, d);
    }
    all.into_iter().map(|(r, _, _)| r).collect()
}

/// The queries' meanings, computed directly on an adjacency list.
fn expected(edges: &[Edge], class: QueryClass, args: &[Arg]) -> BTreeSet<Row> {
    let mut adj: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for &(s, d) in edges {
        adj.entry(s).or_default().push(d);
    }
    let out = |n: &u64| adj.get(n).cloned().unwrap_or_default();
    let mut rows = BTreeSet::new();
    for &(a, b) in args {
        match class {
            QueryClass::Lookup => {
                let degree = out(&a).len() as u64;
                if degree > 0 {
                    rows.insert((a, 0, degree));
                }
            }
            QueryClass::OneHop => rows.extend(out(&a).into_iter().map(|d| (a, 0, d))),
            QueryClass::TwoHop => rows.extend(out(&a).iter().flat_map(|m| out(m)).map(|d| (a, 0, d))),
            QueryClass::FourPath => {
                if let Some(d) = oracle::hops(&adj, a, 4).get(&b) {
                    rows.insert((a, b, *d));
                }
            }
        }
    }
    rows
}

const CHAIN: [Edge; 4] = [(1, 2), (2, 3), (3, 4), (4, 5)];

#[test]
fn chain_queries() {
    assert_eq!(answers(1, &CHAIN, QueryClass::TwoHop, &[(1, 0)]), BTreeSet::from([(1, 0, 3)]));
    assert_eq!(answers(1, &CHAIN, QueryClass::FourPath, &[(1, 5)]), BTreeSet::from([(1, 5, 4)]));
    assert_eq!(answers(1, &CHAIN, QueryClass::OneHop, &[(1, 0)]), BTreeSet::from([(1, 0, 2)]));
    assert_eq!(answers(1, &CHAIN, QueryClass::Lookup, &[(1, 0), (5, 0)]), BTreeSet::from([(1, 0, 1)]));
    // Against the direction of the edges there is no path.
    assert!(answers(1, &CHAIN, QueryClass::FourPath, &[(5, 1)]).is_empty());
}

#[test]
fn four_path_ignores_longer_paths() {
    let chain: Vec<Edge> = (1..7).map(|i| (i, i + 1)).collect();
    assert!(answers(1, &chain, QueryClass::FourPath, &[(1, 6)]).is_empty());
    assert_eq!(answers(1, &chain, QueryClass::FourPath, &[(1, 1)]), BTreeSet::from([(1, 1, 0)]));
}

#[test]
fn random_graph_queries_match_adjacency_oracle() {
    let edges = random_graph(40, 120, 7);
    let nodes: Vec<Arg> = (0..40).step_by(3).map(|n| (n, 0)).collect();
    let pairs: Vec<Arg> = (0..40).step_by(3).map(|n| (n, (n * 7 + 3) % 40)).collect();
    for class in QueryClass::ALL {
        let args = if class == QueryClass::FourPath { &pairs } else { &nodes };
        for workers in [1, 3] {
            assert_eq!(answers(workers, &edges, class, args), expected(&edges, class, args), "{} with {} workers", class.name(), workers);
        }
    }
}

fn graph_config(share: bool) -> GraphConfig {
    GraphConfig {
        workers: 1,
        nodes: 200,
        edges: random_graph(200, 800, 3),
        queries: QueryClass::ALL.to_vec(),
        update_rate: 20_000,
        query_rate: 4_000,
        duration: Duration::from_millis(30),
        share,
        arguments: 4,
        seed: 3,
    }
}

#[test]
fn graph_modes_agree_while_answers_churn() {
    let shared = run_graph(&graph_config(true)).unwrap();
    let private = run_graph(&graph_config(false)).unwrap();
    assert_eq!(shared.outputs, private.outputs);
    for class in QueryClass::ALL {
        let history = &shared.outputs[&class];
        assert!(history.iter().any(|(_, _, d)| *d > 0), "{} produced no answers", class.name());
        assert!(history.iter().any(|(_, _, d)| *d < 0), "{} retracted nothing", class.name());
    }
    assert_eq!(shared.graph_traces().len(), 2);
    assert_eq!(private.graph_traces().len(), 5);
    assert!(shared.latency.classes().count() == 4);
}

#[test]
fn graph_runs_are_seed_deterministic() {
    let a = run_graph(&graph_config(true)).unwrap();
    let b = run_graph(&graph_config(true)).unwrap();
    assert_eq!(a.outputs, b.outputs);
    assert_eq!(a.graph_updates_sent, b.graph_updates_sent);
    assert_eq!(a.query_updates_sent, b.query_updates_sent);
}

#[test]
fn reachability_examples() {
    let tc = |edges: &[Edge], sources: &[u64]| datalog_tc(1, edges, sources).unwrap().reachable;
    assert_eq!(tc(&[(1, 2), (2, 3)], &[1]), vec![(1, 2)]);
    assert_eq!(tc(&[], &[1]), vec![(1, 0)]);
    assert_eq!(tc(&[(1, 2), (2, 1)], &[1]), vec![(1, 2)]);
}

#[test]
fn reachability_matches_oracle() {
    let edges = random_graph(60, 90, 11);
    let sources = [0, 5, 17];
    let got = datalog_tc(2, &edges, &sources).unwrap().reachable;
    let multiset: oracle::Multiset<Edge> = edges.iter().map(|e| (*e, 1)).collect();
    let reach = oracle::reach(&multiset, &sources.iter().copied().collect());
    for (s, n) in got {
        let expected = reach.keys().filter(|(_, src)| *src == s).count();
        assert_eq!(n, expected, "source {}", s);
    }
}

#[test]
fn empty_join_batch() {
    let rounds = bench_join(&JoinConfig { workers: 1, arranged: 1_000, batches: vec![0, 10], seed: 1 }).unwrap();
    assert_eq!(rounds[0].outputs, 0);
    assert!(rounds[0].correct && rounds[1].correct);
}

#[test]
fn join_work_grows_with_the_batch() {
    let rounds = bench_join(&JoinConfig { workers: 2, arranged: 20_000, batches: vec![10, 10_000], seed: 2 }).unwrap();
    assert!(rounds.iter().all(|r| r.correct));
    assert!(rounds[1].cursor_advances > 50 * rounds[0].cursor_advances);
}

fn arrange(workers: usize, rate: u64, effort: Effort) -> harness::workloads::arrange::ArrangeReport {
    bench_arrange(&ArrangeConfig { workers, keys: 2_000, rate, duration: Duration::from_millis(100), effort, seed: 5 }).unwrap()
}

fn work(report: &harness::workloads::arrange::ArrangeReport, name: &str) -> u64 {
    report.work.iter().find(|(n, _)| n == name).map(|(_, v)| *v).unwrap()
}

#[test]
fn idle_stream_still_makes_progress() {
    let report = arrange(1, 0, Effort::default());
    assert_eq!(report.offered, 0);
    assert_eq!(report.latency.samples("arrange").len(), 100);
    assert_eq!(report.counts.iter().map(|(_, c)| *c).sum::<i64>(), 2_000);
}

#[test]
fn arrange_counts_do_not_depend_on_workers() {
    let one = arrange(1, 50_000, Effort::default());
    let four = arrange(4, 50_000, Effort::default());
    assert_eq!(one.counts, four.counts);
    assert!(one.offered > 0);
}

#[test]
fn merge_effort_settings() {
    let eager = arrange(1, 50_000, Effort::Eager);
    let lazy = arrange(1, 50_000, Effort::Lazy);
    let default = arrange(1, 50_000, Effort::default());
    assert_eq!(eager.counts, lazy.counts);
    assert_eq!(work(&eager, "settle_work"), 0);
    for r in [&lazy, &default] {
        assert!(work(r, "max_insert_excess") <= 64);
        // Deferred merges are still owed, so compare the work to reach a settled trace.
        assert!(work(&eager, "total_merge_work") <= work(r, "total_merge_work"));
    }
    assert!(work(&lazy, "max_insert_work") < work(&eager, "max_insert_work"));
}
