//! Edge lists: one `src dst` pair of decimal node ids per line, `#` comments.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EdgeError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub type Edge = (u64, u64);

pub fn parse_edges(text: &str) -> Result<Vec<Edge>, EdgeError> {
    let mut edges = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(EdgeError::Parse {
                line: i + 1,
                message: format!("expected two node ids, found {} fields", fields.len()),
            });
        }
        let parse = |s: &str| {
            s.parse::<u64>().map_err(|_| EdgeError::Parse { line: i + 1, message: format!("invalid node id {:?}", s) })
        };
        edges.push((parse(fields[0])?, parse(fields[1])?));
    }
    Ok(edges)
}

pub fn read_edges(path: &Path) -> Result<Vec<Edge>, EdgeError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| EdgeError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_edges(&text)
}

/// `edges` uniformly random directed edges over `nodes` nodes.
pub fn random_graph(nodes: u64, edges: usize, seed: u64) -> Vec<Edge> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..edges).map(|_| (rng.gen_range(0..nodes), rng.gen_range(0..nodes))).collect()
}

/// Parses `N,M` as used by `--random`.
pub fn parse_random_spec(spec: &str) -> Result<(u64, usize), String> {
    let (n, m) = spec.split_once(',').ok_or_else(|| format!("expected N,M; got {:?}", spec))?;
    let n: u64 = n.trim().parse().map_err(|_| format!("invalid node count {:?}", n))?;
    let m: usize = m.trim().parse().map_err(|_| format!("invalid edge count {:?}", m))?;
    if n == 0 {
        return Err("node count must be positive".into());
    }
    Ok((n, m))
}
