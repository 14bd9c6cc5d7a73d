use std::collections::{BTreeMap, VecDeque};
use std::fs::OpenOptions;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MetricSample, MonitorError};
use crate::model::{Millis, ReflectorId};

pub const DEFAULT_SERIES_CAPACITY: usize = 4096;
/// 8 MiB: leaves the rest of a 16 MB service budget for everything else.
pub const DEFAULT_BUDGET_BYTES: usize = 8 * 1024 * 1024;

/// Estimated cost of one retained sample: an `f64` value and a `u64` timestamp.
pub const SAMPLE_COST_BYTES: usize = 16;
/// Estimated fixed cost of one series (map node, key, ring header, head), excluding the name.
pub const SERIES_OVERHEAD_BYTES: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreConfig {
    pub series_capacity: usize,
    pub budget_bytes: usize,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            series_capacity: DEFAULT_SERIES_CAPACITY,
            budget_bytes: DEFAULT_BUDGET_BYTES,
        }
    }
}

pub type SeriesKey = (ReflectorId, String);

#[derive(Clone, Copy, Debug, PartialEq)]
struct Point {
    at: Millis,
    value: f64,
}

/// In-memory embedded store: one ring per series plus a global byte budget.
#[derive(Debug, Default)]
pub struct MetricStore {
    config: StoreConfig,
    series: BTreeMap<SeriesKey, VecDeque<Point>>,
    footprint: usize,
    evicted: u64,
    regressions: u64,
    recorded: u64,
}

fn series_cost(name: &str, len: usize) -> usize {
    SERIES_OVERHEAD_BYTES + name.len() + len * SAMPLE_COST_BYTES
}

impl MetricStore {
    pub fn new(config: StoreConfig) -> Self {
        Self {
            config,
            ..Default::default()
        }
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn record(&mut self, s: &MetricSample) -> Result<(), MonitorError> {
        if s.name.is_empty() {
            return Err(MonitorError::EmptyName);
        }
        let key = (s.reflector, s.name.clone());
        if let Some(head) = self.series.get(&key).and_then(|r| r.back()) {
            if s.at < head.at {
                self.regressions += 1;
                return Err(MonitorError::TimestampRegression {
                    reflector: s.reflector,
                    name: s.name.clone(),
                    head: head.at,
                    at: s.at,
                });
            }
        }
        let cap = self.config.series_capacity.max(1);
        let ring = self.series.entry(key).or_insert_with(|| {
            self.footprint += series_cost(&s.name, 0);
            VecDeque::new()
        });
        if ring.len() >= cap {
            ring.pop_front();
            self.evicted += 1;
            self.footprint -= SAMPLE_COST_BYTES;
        }
        ring.push_back(Point {
            at: s.at,
            value: s.value,
        });
        self.footprint += SAMPLE_COST_BYTES;
        self.recorded += 1;
        self.enforce_budget();
        Ok(())
    }

    /// Evicts globally-oldest samples until the estimate fits the budget.
    fn enforce_budget(&mut self) {
        while self.footprint > self.config.budget_bytes {
            let Some(key) = self
                .series
                .iter()
                .filter_map(|(k, r)| r.front().map(|p| (p.at, k)))
                .min()
                .map(|(_, k)| k.clone())
            else {
                break;
            };
            let ring = self.series.get_mut(&key).expect("key just found");
            ring.pop_front();
            self.evicted += 1;
            self.footprint -= SAMPLE_COST_BYTES;
            if ring.is_empty() {
                self.series.remove(&key);
                self.footprint -= series_cost(&key.1, 0);
            }
        }
    }

    pub fn query_range(&self, reflector: ReflectorId, name: &str, from: Millis, to: Millis) -> Vec<MetricSample> {
        let Some(ring) = self.series.get(&(reflector, name.to_owned())) else {
            return Vec::new();
        };
        if from > to {
            return Vec::new();
        }
        let start = ring.partition_point(|p| p.at < from);
        let end = ring.partition_point(|p| p.at <= to);
        ring.range(start..end)
            .map(|p| MetricSample::new(reflector, name, p.value, p.at))
            .collect()
    }

    /// The most recent sample of every series.
    pub fn heads(&self) -> Vec<MetricSample> {
        self.series
            .iter()
            .filter_map(|((r, n), ring)| ring.back().map(|p| MetricSample::new(*r, n.clone(), p.value, p.at)))
            .collect()
    }

    pub fn head(&self, reflector: ReflectorId, name: &str) -> Option<MetricSample> {
        self.series
            .get(&(reflector, name.to_owned()))
            .and_then(|r| r.back())
            .map(|p| MetricSample::new(reflector, name, p.value, p.at))
    }

    pub fn series_len(&self, reflector: ReflectorId, name: &str) -> usize {
        self.series.get(&(reflector, name.to_owned())).map_or(0, VecDeque::len)
    }

    pub fn max_series_len(&self) -> usize {
        self.series.values().map(VecDeque::len).max().unwrap_or(0)
    }

    pub fn series_count(&self) -> usize {
        self.series.len()
    }

    pub fn retained(&self) -> usize {
        self.series.values().map(VecDeque::len).sum()
    }

    /// Estimated footprint in bytes using the fixed per-sample and per-series costs.
    pub fn estimated_bytes(&self) -> usize {
        self.footprint
    }

    pub fn evicted(&self) -> u64 {
        self.evicted
    }

    pub fn regressions(&self) -> u64 {
        self.regressions
    }

    pub fn recorded(&self) -> u64 {
        self.recorded
    }

    /// Appends every retained sample to `path` as JSON lines.
    pub fn append_snapshot(&self, path: &Path) -> io::Result<usize> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut out = BufWriter::new(file);
        let mut n = 0;
        for ((r, name), ring) in &self.series {
            for p in ring {
                let line = serde_json::to_string(&MetricSample::new(*r, name.clone(), p.value, p.at))?;
                writeln!(out, "{line}")?;
                n += 1;
            }
        }
        out.flush()?;
        Ok(n)
    }

    /// Replays a snapshot file. Samples that regress are skipped, so loading
    /// the same file twice is harmless.
    pub fn load_snapshot(&mut self, path: &Path) -> io::Result<usize> {
        let file = std::fs::File::open(path)?;
        let mut n = 0;
        for line in BufReader::new(file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let s: MetricSample = serde_json::from_str(&line)?;
            if let Some(head) = self.head(s.reflector, &s.name) {
                if s.at <= head.at {
                    continue;
                }
            }
            if self.record(&s).is_ok() {
                n += 1;
            }
        }
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(name: &str, value: f64, at: Millis) -> MetricSample {
        MetricSample::new(ReflectorId(1), name, value, at)
    }

    #[test]
    fn ring_keeps_last_capacity_samples() {
        let mut store = MetricStore::new(StoreConfig {
            series_capacity: 3,
            ..Default::default()
        });
        for i in 0..4 {
            store.record(&sample("sys.load", i as f64, i)).unwrap();
        }
        let got: Vec<f64> = store
            .query_range(ReflectorId(1), "sys.load", 0, 100)
            .iter()
            .map(|s| s.value)
            .collect();
        assert_eq!(got, vec![1.0, 2.0, 3.0]);
        assert_eq!(store.evicted(), 1);
    }

    #[test]
    fn regression_rejected_and_counted() {
        let mut store = MetricStore::default();
        store.record(&sample("sys.load", 1.0, 10)).unwrap();
        store.record(&sample("sys.load", 2.0, 10)).unwrap();
        let err = store.record(&sample("sys.load", 3.0, 9)).unwrap_err();
        assert!(matches!(err, MonitorError::TimestampRegression { head: 10, at: 9, .. }));
        assert_eq!(store.series_len(ReflectorId(1), "sys.load"), 2);
        assert_eq!(store.regressions(), 1);
    }

    #[test]
    fn query_range_bounds_are_inclusive() {
        let mut store = MetricStore::default();
        assert!(store.query_range(ReflectorId(1), "x", 0, 10).is_empty());
        for at in [5, 10, 15, 20] {
            store.record(&sample("x", at as f64, at)).unwrap();
        }
        let ats: Vec<_> = store.query_range(ReflectorId(1), "x", 10, 15).iter().map(|s| s.at).collect();
        assert_eq!(ats, vec![10, 15]);
        assert!(store.query_range(ReflectorId(1), "x", 16, 19).is_empty());
        assert!(store.query_range(ReflectorId(1), "x", 20, 5).is_empty());
    }

    #[test]
    fn footprint_tracks_estimate() {
        let mut store = MetricStore::default();
        store.record(&sample("abc", 1.0, 1)).unwrap();
        store.record(&sample("abc", 1.0, 2)).unwrap();
        assert_eq!(store.estimated_bytes(), SERIES_OVERHEAD_BYTES + 3 + 2 * SAMPLE_COST_BYTES);
    }

    #[test]
    fn budget_evicts_globally_oldest() {
        let one_series = series_cost("a", 4);
        let mut store = MetricStore::new(StoreConfig {
            series_capacity: 100,
            budget_bytes: one_series,
        });
        for at in 0..4 {
            store.record(&sample("a", 0.0, at)).unwrap();
        }
        assert_eq!(store.estimated_bytes(), one_series);
        store.record(&sample("a", 0.0, 4)).unwrap();
        assert_eq!(store.series_len(ReflectorId(1), "a"), 4);
        assert_eq!(store.query_range(ReflectorId(1), "a", 0, 0).len(), 0);
        store.record(&sample("b", 0.0, 5)).unwrap();
        assert!(store.estimated_bytes() <= one_series);
    }

    #[test]
    fn snapshot_file_roundtrip() {
        let dir = std::env::temp_dir().join(format!("vrvs-store-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("snap.jsonl");
        let _ = std::fs::remove_file(&path);
        let mut store = MetricStore::default();
        for at in 0..5 {
            store.record(&sample("vrvs.clients", at as f64, at)).unwrap();
        }
        assert_eq!(store.append_snapshot(&path).unwrap(), 5);
        let mut other = MetricStore::default();
        assert_eq!(other.load_snapshot(&path).unwrap(), 5);
        assert_eq!(other.load_snapshot(&path).unwrap(), 0);
        assert_eq!(other.heads(), store.heads());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
