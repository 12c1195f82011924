//! Run reports and rate summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A success count with its Wilson 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub successes: usize,
    pub trials: usize,
    pub rate: f64,
    pub low: f64,
    pub high: f64,
}

impl RateEstimate {
    pub fn new(successes: usize, trials: usize) -> Self {
        let (low, high) = wilson_interval(successes, trials, 1.959_963_984_540_054);
        let rate = if trials == 0 { 0.0 } else { successes as f64 / trials as f64 };
        RateEstimate { successes, trials, rate, low, high }
    }
}

/// Wilson score interval for a binomial proportion at normal quantile `z`.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
    let low = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let high = if successes == trials { 1.0 } else { (centre + half).min(1.0) };
    (low, high)
}

/// What one replication produced.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    /// Finite scalar outputs; non-finite values are dropped on insert.
    pub metrics: BTreeMap<String, f64>,
    pub flags: BTreeMap<String, bool>,
}

impl ReplicationRecord {
    pub fn new(replication: usize) -> Self {
        ReplicationRecord { replication, ..Default::default() }
    }

    pub fn metric(&mut self, name: impl Into<String>, value: f64) {
        if value.is_finite() {
            self.metrics.insert(name.into(), value);
        }
    }

    pub fn flag(&mut self, name: impl Into<String>, value: bool) {
        self.flags.insert(name.into(), value);
    }
}

/// A replication that failed at runtime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abort {
    pub replication: usize,
    pub error: String,
}

/// Everything a command writes to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub seed: u64,
    pub replications: usize,
    /// Resolved parameters (schedule, constants, thresholds). Non-finite
    /// numbers appear as null.
    pub parameters: serde_json::Value,
    /// Rate of every flag across successful replications.
    pub rates: BTreeMap<String, RateEstimate>,
    /// Mean of every metric across successful replications.
    pub means: BTreeMap<String, f64>,
    pub records: Vec<ReplicationRecord>,
    pub aborts: Vec<Abort>,
    /// Wall-clock seconds per phase; the only field that varies between
    /// identical runs.
    #[serde(default)]
    pub timings: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn new(command: &str, seed: u64, parameters: serde_json::Value, records: Vec<ReplicationRecord>, aborts: Vec<Abort>) -> Self {
        let mut rates = BTreeMap::new();
        let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for r in &records {
            for (k, &v) in &r.flags {
                let e = counts.entry(k.as_str()).or_default();
                e.0 += usize::from(v);
                e.1 += 1;
            }
        }
        for (k, (s, t)) in counts {
            rates.insert(k.to_string(), RateEstimate::new(s, t));
        }
        let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
        for r in &records {
            for (k, &v) in &r.metrics {
                let e = sums.entry(k.as_str()).or_default();
                e.0 += v;
                e.1 += 1;
            }
        }
        let means = sums.into_iter().map(|(k, (s, c))| (k.to_string(), s / c as f64)).collect();
        RunReport {
            command: command.to_string(),
            seed,
            replications: records.len() + aborts.len(),
            parameters,
            rates,
            means,
            records,
            aborts,
            timings: BTreeMap::new(),
        }
    }

    pub fn rate(&self, flag: &str) -> Option<&RateEstimate> {
        self.rates.get(flag)
    }

    /// JSON with timings removed, for comparing runs.
    pub fn to_json_without_timings(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.timings.clear();
        copy.to_json()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(std::io::Error::other(e)))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad report: {e}")))
    }
}
