//! CSV outputs: latency samples, trace memory, and work counters.

use std::path::{Path, PathBuf};

use crate::latency::LatencyRecorder;

/// `path` with its extension replaced by `<suffix>.csv`, e.g. `out.csv` to `out.memory.csv`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{}.{}.csv", stem, suffix))
}

pub fn write_latency(path: &Path, latency: &LatencyRecorder) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["query_class", "latency_ns"])?;
    for (class, ns) in latency.rows() {
        w.write_record([class, ns.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Rows of `(trace_name, resident_updates, resident_batches)`.
pub fn write_memory(path: &Path, rows: &[(String, usize, usize)]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["trace_name", "resident_updates", "resident_batches"])?;
    for (name, updates, batches) in rows {
        w.write_record([name.clone(), updates.to_string(), batches.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_work(path: &Path, rows: &[(String, u64)]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["counter", "value"])?;
    for (name, value) in rows {
        w.write_record([name.clone(), value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sibling_names() {
        assert_eq!(sibling(Path::new("/tmp/run.csv"), "memory"), PathBuf::from("/tmp/run.memory.csv"));
        assert_eq!(sibling(Path::new("run"), "work"), PathBuf::from("run.work.csv"));
    }
}
