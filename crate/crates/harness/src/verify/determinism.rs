//! Consolidated outputs must not depend on the worker count or on join fuel.

use std::time::Duration;

use shared_arrangements::dataflow::{Config, Faults};

use super::operators::{self, Limits};
use super::{case_rng, random_stream};
use crate::edges::random_graph;
use crate::workloads::graph::{run_graph, GraphConfig, GraphReport, QueryClass};

pub const WORKERS: [usize; 3] = [1, 2, 4];

/// Operator outputs for one random stream under each worker count, and with minimal join fuel.
pub fn operators_case(seed: u64, case: usize, limits: Limits) -> Result<(), String> {
    let mut rng = case_rng(seed, case);
    let (updates, epochs) = random_stream(&mut rng, limits.max_updates, limits.max_keys, limits.max_vals, limits.max_epochs);
    let mut reference = None;
    let configs = WORKERS
        .iter()
        .map(|&w| (format!("{} workers", w), operators::config(w, &Faults::default())))
        .chain(std::iter::once(("join fuel 1".to_string(), Config { join_fuel: 1, ..Config::workers(2) })));
    for (name, config) in configs {
        let out = operators::check(&updates, epochs, config).map_err(|m| format!("{}: {}", name, m))?;
        let summary = (
            out.count.consolidated(),
            out.distinct.consolidated(),
            out.join.consolidated(),
            out.min.consolidated(),
            out.reach.consolidated(),
        );
        match &reference {
            None => reference = Some((name, summary)),
            Some((first, r)) if *r != summary => {
                return Err(format!("case {}: consolidated outputs with {} differ from those with {}", case, name, first));
            }
            Some(_) => {}
        }
    }
    Ok(())
}

/// A small graph workload with every query class.
pub fn graph_config(workers: usize, share: bool, seed: u64) -> GraphConfig {
    GraphConfig {
        workers,
        nodes: 300,
        edges: random_graph(300, 1_200, seed),
        queries: QueryClass::ALL.to_vec(),
        update_rate: 20_000,
        query_rate: 4_000,
        duration: Duration::from_millis(40),
        share,
        arguments: 6,
        seed,
    }
}

/// Runs the graph workload in both sharing modes and under each worker count, requiring
/// identical consolidated outputs. Returns the reports in the order run.
pub fn graph_case(seed: u64) -> Result<Vec<(usize, bool, GraphReport)>, String> {
    let mut reports: Vec<(usize, bool, GraphReport)> = Vec::new();
    for &w in WORKERS.iter() {
        for share in [true, false] {
            let report = run_graph(&graph_config(w, share, seed)).map_err(|e| e.to_string())?;
            if let Some((w0, s0, first)) = reports.first() {
                for class in QueryClass::ALL {
                    if first.outputs.get(&class) != report.outputs.get(&class) {
                        return Err(format!(
                            "{} answers with {} workers (share {}) differ from {} workers (share {})",
                            class.name(),
                            w,
                            share,
                            w0,
                            s0
                        ));
                    }
                }
            }
            reports.push((w, share, report));
        }
    }
    Ok(reports)
}

pub fn run(seed: u64, iterations: usize) -> (usize, Option<String>) {
    let limits = Limits { max_updates: 2_000, ..Limits::default() };
    for i in 0..iterations {
        if let Err(m) = operators_case(seed, i, limits) {
            return (i + 1, Some(m));
        }
    }
    if iterations > 0 {
        if let Err(m) = graph_case(seed) {
            return (iterations, Some(m));
        }
    }
    (iterations, None)
}
