use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use harness::edges::{parse_random_spec, random_graph, read_edges};
use harness::latency::LatencyRecorder;
use harness::output::{sibling, write_latency, write_memory, write_work};
use harness::verify::{self, Suite};
use harness::workloads::arrange::{bench_arrange, ArrangeConfig};
use harness::workloads::graph::{run_graph, GraphConfig, QueryClass};
use harness::workloads::join::{bench_join, JoinConfig};
use harness::workloads::tc::datalog_tc;
use shared_arrangements::dataflow::Faults;
use shared_arrangements::trace::Effort;

#[derive(Parser)]
#[command(name = "sharr", version, about = "Workloads and verification suites for shared arrangements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Arrange and count an open-loop stream of random key replacements.
    BenchArrange(BenchArrange),
    /// Join collections of several sizes against one pre-arranged collection.
    BenchJoin(BenchJoin),
    /// Standing graph queries over an evolving graph, with or without shared edge indexes.
    Graph(Graph),
    /// Reachability from a set of sources.
    DatalogTc(DatalogTc),
    /// Run a randomized property suite.
    Verify(Verify),
}

#[derive(Args)]
struct BenchArrange {
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 100_000)]
    keys: usize,
    /// Offered updates per second.
    #[arg(long, default_value_t = 100_000)]
    rate: u64,
    /// Seconds of offered load.
    #[arg(long, default_value_t = 1.0)]
    duration: f64,
    /// `eager`, `lazy`, or a positive integer.
    #[arg(long, default_value = "8")]
    merge_effort: Effort,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Latency CSV; work and memory CSVs are written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchJoin {
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 1_000_000)]
    arranged: u64,
    #[arg(long, value_delimiter = ',', default_value = "100,1000,10000,100000")]
    batches: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Graph {
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Edge list file.
    #[arg(long, conflicts_with = "random")]
    edges: Option<PathBuf>,
    /// Uniform random graph with N nodes and M edges, as `N,M`.
    #[arg(long, default_value = "100000,640000")]
    random: String,
    #[arg(long, value_delimiter = ',', default_value = "lookup,one-hop,two-hop,four-path")]
    queries: Vec<QueryClass>,
    /// Graph changes per second.
    #[arg(long, default_value_t = 10_000)]
    update_rate: u64,
    /// Query argument changes per second.
    #[arg(long, default_value_t = 1_000)]
    query_rate: u64,
    #[arg(long, default_value_t = 1.0)]
    duration: f64,
    /// Standing arguments per query class.
    #[arg(long, default_value_t = 16)]
    arguments: usize,
    #[arg(long, overrides_with = "no_share")]
    share: bool,
    #[arg(long)]
    no_share: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DatalogTc {
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    edges: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    sources: Vec<u64>,
}

#[derive(Args)]
struct Verify {
    #[arg(long)]
    suite: Suite,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Deliberately break the engine, to check that the suite notices.
    #[arg(long, value_parser = ["skip-consolidation"])]
    inject_fault: Option<String>,
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {{
        let _ = writeln!($out, $($arg)*);
    }};
}

/// Failures mapped to exit codes: 1 for failed runs and verifications, 2 for bad input.
enum Failure {
    Run(String),
    Usage(String),
}

fn seconds(s: f64) -> Result<Duration, Failure> {
    Duration::try_from_secs_f64(s).map_err(|_| Failure::Usage(format!("invalid duration {}", s)))
}

fn write_outputs(out: &Option<PathBuf>, latency: &LatencyRecorder, work: &[(String, u64)], memory: &[(String, usize, usize)]) -> Result<(), Failure> {
    let Some(path) = out else { return Ok(()) };
    let io = |e: csv::Error| Failure::Run(format!("writing results: {}", e));
    write_latency(path, latency).map_err(io)?;
    if !work.is_empty() {
        write_work(&sibling(path, "work"), work).map_err(io)?;
    }
    if !memory.is_empty() {
        write_memory(&sibling(path, "memory"), memory).map_err(io)?;
    }
    Ok(())
}

fn run(cli: Cli, out: &mut String) -> Result<(), Failure> {
    let engine = |e: shared_arrangements::error::DataflowError| Failure::Run(e.to_string());
    match cli.command {
        Command::BenchArrange(a) => {
            let config = ArrangeConfig {
                workers: a.workers,
                keys: a.keys,
                rate: a.rate,
                duration: seconds(a.duration)?,
                effort: a.merge_effort,
                seed: a.seed,
            };
            let report = bench_arrange(&config).map_err(engine)?;
            out.push_str(&report.latency.summary());
            for (name, value) in report.work.iter() {
                say!(out, "{} = {}", name, value);
            }
            if report.saturated {
                say!(out, "saturated: offered {} updates/s, achieved {:.0}", config.rate, report.achieved_rate);
            }
            write_outputs(&a.out, &report.latency, &report.work, &report.memory)
        }
        Command::BenchJoin(j) => {
            if let Some(m) = j.batches.iter().find(|m| **m as u64 > j.arranged) {
                return Err(Failure::Usage(format!("batch size {} exceeds the arranged size {}", m, j.arranged)));
            }
            let config = JoinConfig { workers: j.workers, arranged: j.arranged, batches: j.batches, seed: j.seed };
            let rounds = bench_join(&config).map_err(engine)?;
            let mut latency = LatencyRecorder::new();
            let mut work = Vec::new();
            say!(out, "{:>10} {:>12} {:>16} {:>10} {:>8}", "batch", "latency_ms", "cursor_advances", "outputs", "correct");
            for r in rounds.iter() {
                say!(out, 
                    "{:>10} {:>12.3} {:>16} {:>10} {:>8}",
                    r.batch,
                    r.latency.as_secs_f64() * 1e3,
                    r.cursor_advances,
                    r.outputs,
                    r.correct
                );
                latency.record(&format!("join-{}", r.batch), harness::workloads::nanos(r.latency));
                work.push((format!("cursor_advances_{}", r.batch), r.cursor_advances));
                work.push((format!("outputs_{}", r.batch), r.outputs));
            }
            write_outputs(&j.out, &latency, &work, &[])?;
            if rounds.iter().all(|r| r.correct) {
                Ok(())
            } else {
                Err(Failure::Run("join output differs from brute force".into()))
            }
        }
        Command::Graph(g) => {
            let (nodes, edges) = match &g.edges {
                Some(path) => {
                    let edges = read_edges(path).map_err(|e| Failure::Usage(e.to_string()))?;
                    let nodes = edges.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(1);
                    (nodes, edges)
                }
                None => {
                    let (n, m) = parse_random_spec(&g.random).map_err(Failure::Usage)?;
                    (n, random_graph(n, m, g.seed))
                }
            };
            let config = GraphConfig {
                workers: g.workers,
                nodes,
                edges,
                queries: g.queries,
                update_rate: g.update_rate,
                query_rate: g.query_rate,
                duration: seconds(g.duration)?,
                share: g.share || !g.no_share,
                arguments: g.arguments,
                seed: g.seed,
            };
            let report = run_graph(&config).map_err(engine)?;
            out.push_str(&report.latency.summary());
            for (name, updates, batches) in report.memory.iter() {
                say!(out, "{:<20} resident_updates={} resident_batches={}", name, updates, batches);
            }
            say!(out, "resident graph updates: {}", report.resident_graph_updates());
            let work = vec![
                ("graph_updates".to_string(), report.graph_updates_sent),
                ("query_updates".to_string(), report.query_updates_sent),
                ("resident_graph_updates".to_string(), report.resident_graph_updates() as u64),
            ];
            write_outputs(&g.out, &report.latency, &work, &report.memory)
        }
        Command::DatalogTc(t) => {
            let edges = read_edges(&t.edges).map_err(|e| Failure::Usage(e.to_string()))?;
            let report = datalog_tc(t.workers, &edges, &t.sources).map_err(engine)?;
            for (source, count) in report.reachable.iter() {
                say!(out, "source {}: {} reachable", source, count);
            }
            say!(out, "elapsed: {:.3} ms", report.elapsed.as_secs_f64() * 1e3);
            Ok(())
        }
        Command::Verify(v) => {
            let faults = Faults { skip_consolidation: v.inject_fault.is_some() };
            let report = verify::run(v.suite, v.seed, v.iters, &verify::Options { workers: v.workers, faults });
            say!(out, "{}", report);
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::Run(format!("verification failed; rerun with --seed {}", v.seed)))
            }
        }
    }
}

fn main() -> ExitCode {
    let mut out = String::new();
    let result = run(Cli::parse(), &mut out);
    // A closed stdout, as when piping into `head`, is not an error.
    let _ = std::io::stdout().write_all(out.as_bytes());
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Run(m)) => {
            eprintln!("error: {}", m);
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {}", m);
            ExitCode::from(2)
        }
    }
}
