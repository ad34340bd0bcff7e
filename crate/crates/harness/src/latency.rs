//! Latency samples per query class, reported as complementary CDFs.

use std::collections::BTreeMap;

/// Samples in nanoseconds, keyed by class. Each worker keeps its own and they are merged at
/// shutdown.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LatencyRecorder {
    samples: BTreeMap<String, Vec<u64>>,
}

impl LatencyRecorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, class: &str, nanos: u64) {
        self.samples.entry(class.to_string()).or_default().push(nanos);
    }

    pub fn merge(&mut self, other: LatencyRecorder) {
        for (class, mut s) in other.samples {
            self.samples.entry(class).or_default().append(&mut s);
        }
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.samples.keys().map(|s| s.as_str())
    }

    pub fn samples(&self, class: &str) -> &[u64] {
        self.samples.get(class).map_or(&[], |s| s.as_slice())
    }

    pub fn len(&self) -> usize {
        self.samples.values().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(latency, fraction of samples strictly greater)` at each distinct latency, ascending.
    pub fn ccdf(&self, class: &str) -> Vec<(u64, f64)> {
        let mut sorted = self.samples(class).to_vec();
        sorted.sort_unstable();
        let n = sorted.len() as f64;
        let mut out = Vec::new();
        let mut i = 0;
        while i < sorted.len() {
            let v = sorted[i];
            while i < sorted.len() && sorted[i] == v {
                i += 1;
            }
            out.push((v, (sorted.len() - i) as f64 / n));
        }
        out
    }

    /// The smallest sample with at most `1 - q` of samples above it.
    pub fn quantile(&self, class: &str, q: f64) -> Option<u64> {
        let mut sorted = self.samples(class).to_vec();
        if sorted.is_empty() {
            return None;
        }
        sorted.sort_unstable();
        let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
        Some(sorted[rank - 1])
    }

    /// Every `(class, latency_ns)` sample, classes in order and samples ascending.
    pub fn rows(&self) -> Vec<(String, u64)> {
        let mut rows = Vec::with_capacity(self.len());
        for (class, s) in self.samples.iter() {
            let mut s = s.clone();
            s.sort_unstable();
            rows.extend(s.into_iter().map(|v| (class.clone(), v)));
        }
        rows
    }

    /// One line per class: sample count and p50/p95/p99/max in milliseconds.
    pub fn summary(&self) -> String {
        let ms = |v: Option<u64>| v.map_or(0.0, |v| v as f64 / 1e6);
        let mut out = String::new();
        for class in self.classes() {
            out.push_str(&format!(
                "{:<10} n={:<7} p50={:.3}ms p95={:.3}ms p99={:.3}ms max={:.3}ms\n",
                class,
                self.samples(class).len(),
                ms(self.quantile(class, 0.5)),
                ms(self.quantile(class, 0.95)),
                ms(self.quantile(class, 0.99)),
                ms(self.quantile(class, 1.0)),
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ccdf_counts_strictly_greater() {
        let mut r = LatencyRecorder::new();
        for v in [5, 1, 3, 3] {
            r.record("q", v);
        }
        assert_eq!(r.ccdf("q"), vec![(1, 0.75), (3, 0.25), (5, 0.0)]);
        assert_eq!(r.quantile("q", 0.5), Some(3));
        assert_eq!(r.quantile("q", 1.0), Some(5));
        assert!(r.ccdf("missing").is_empty());
    }

    #[test]
    fn merge_concatenates() {
        let mut a = LatencyRecorder::new();
        a.record("x", 1);
        let mut b = LatencyRecorder::new();
        b.record("x", 2);
        b.record("y", 3);
        a.merge(b);
        assert_eq!(a.rows(), vec![("x".into(), 1), ("x".into(), 2), ("y".into(), 3)]);
    }
}
