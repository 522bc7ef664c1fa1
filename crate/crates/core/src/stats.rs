//! Run metrics, summaries and baseline normalization.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Raw counters and time-tagged samples collected during one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub total_cycles: u64,
    pub thread_cycles: Vec<u64>,
    pub events: u64,
    pub llc_scope_buffer_hits: u64,
    pub llc_scope_buffer_misses: u64,
    pub l1_scope_buffer_hits: u64,
    pub l1_scope_buffer_misses: u64,
    /// `(time, cycles)` per PIM op at the LLC; scope-buffer hits count as 0.
    pub scan_latency: Vec<(u64, u64)>,
    /// `(time, sets skipped, sets total)` per performed LLC scan.
    pub sbv_skips: Vec<(u64, u32, u32)>,
    /// `(time, resident ops)` at each PIM op arrival.
    pub pim_occupancy: Vec<(u64, u32)>,
    /// `(time, distinct scopes)` at each PIM op arrival.
    pub pim_unique_scopes: Vec<(u64, u32)>,
    /// `(time, queue length)` at each controller acceptance.
    pub mc_queue: Vec<(u64, u32)>,
    pub pim_ops_at_llc: u64,
    pub pim_ops_executed: u64,
    pub pim_busy_max: u64,
    pub scan_lines_flushed: u64,
    pub mc_scan_writebacks: u64,
    pub mc_scan_invalidations: u64,
    pub l1_hits: u64,
    pub l1_misses: u64,
    pub llc_hits: u64,
    pub llc_misses: u64,
    pub dram_reads: u64,
    pub dram_writes: u64,
}

fn mean<T: Copy + Into<f64>>(xs: impl Iterator<Item = T>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0u64), |(s, n), x| (s + x.into(), n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Arithmetic mean, `None` for an empty sample.
pub fn mean_of(xs: &[f64]) -> Option<f64> {
    mean(xs.iter().copied())
}

impl RunMetrics {
    /// `None` when no PIM op reached the LLC.
    pub fn llc_hit_rate(&self) -> Option<f64> {
        let total = self.llc_scope_buffer_hits + self.llc_scope_buffer_misses;
        (total > 0).then(|| self.llc_scope_buffer_hits as f64 / total as f64)
    }

    pub fn mean_scan_latency(&self) -> Option<f64> {
        mean(self.scan_latency.iter().map(|&(_, c)| c as f64))
    }

    pub fn mean_skip_ratio(&self) -> Option<f64> {
        mean(self.sbv_skips.iter().map(|&(_, s, t)| s as f64 / t as f64))
    }

    pub fn mean_pim_occupancy(&self) -> Option<f64> {
        mean(self.pim_occupancy.iter().map(|&(_, n)| n as f64))
    }

    pub fn mean_unique_scopes(&self) -> Option<f64> {
        mean(self.pim_unique_scopes.iter().map(|&(_, n)| n as f64))
    }

    pub fn max_pim_occupancy(&self) -> u32 {
        self.pim_occupancy.iter().map(|&(_, n)| n).max().unwrap_or(0)
    }

    pub fn mean_mc_queue(&self) -> Option<f64> {
        mean(self.mc_queue.iter().map(|&(_, n)| n as f64))
    }
}

/// Scalar summary of one run, the unit written to JSON and CSV reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub configuration: String,
    pub config_hash: String,
    pub workload_hash: String,
    pub seed: u64,
    pub total_cycles: u64,
    pub thread_cycles: Vec<u64>,
    pub events: u64,
    pub scope_buffer_hit_rate: Option<f64>,
    pub mean_scan_latency: Option<f64>,
    pub mean_skip_ratio: Option<f64>,
    pub mean_pim_occupancy: Option<f64>,
    pub max_pim_occupancy: u32,
    pub mean_unique_scopes: Option<f64>,
    pub mean_mc_queue: Option<f64>,
    pub pim_ops: u64,
    pub pim_busy_max: u64,
    pub scan_lines_flushed: u64,
    pub mc_scan_messages: u64,
    pub invariant_violations: usize,
    pub oracle_match: Option<bool>,
    pub normalized_cycles: Option<f64>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("baseline workload hash {baseline} does not match {run}")]
    BaselineMismatch { run: String, baseline: String },
}

/// Hex SHA-256 of a canonical JSON rendering.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("hashable value serializes");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn summarize(
    metrics: &RunMetrics,
    configuration: &str,
    config_hash: &str,
    workload_hash: &str,
    seed: u64,
    violations: usize,
) -> RunReport {
    RunReport {
        configuration: configuration.to_string(),
        config_hash: config_hash.to_string(),
        workload_hash: workload_hash.to_string(),
        seed,
        total_cycles: metrics.total_cycles,
        thread_cycles: metrics.thread_cycles.clone(),
        events: metrics.events,
        scope_buffer_hit_rate: metrics.llc_hit_rate(),
        mean_scan_latency: metrics.mean_scan_latency(),
        mean_skip_ratio: metrics.mean_skip_ratio(),
        mean_pim_occupancy: metrics.mean_pim_occupancy(),
        max_pim_occupancy: metrics.max_pim_occupancy(),
        mean_unique_scopes: metrics.mean_unique_scopes(),
        mean_mc_queue: metrics.mean_mc_queue(),
        pim_ops: metrics.pim_ops_executed,
        pim_busy_max: metrics.pim_busy_max,
        scan_lines_flushed: metrics.scan_lines_flushed,
        mc_scan_messages: metrics.mc_scan_writebacks + metrics.mc_scan_invalidations,
        invariant_violations: violations,
        oracle_match: None,
        normalized_cycles: None,
    }
}

/// Per-metric ratios of `run` over `baseline`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalized {
    pub total_cycles: f64,
    pub mean_scan_latency: Option<f64>,
    pub mean_unique_scopes: Option<f64>,
    pub mean_pim_occupancy: Option<f64>,
}

fn ratio(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) if b != 0.0 => Some(a / b),
        (Some(a), Some(b)) if a == b => Some(1.0),
        _ => None,
    }
}

pub fn normalize(run: &RunReport, baseline: &RunReport) -> Result<Normalized, StatsError> {
    if run.workload_hash != baseline.workload_hash {
        return Err(StatsError::BaselineMismatch {
            run: run.workload_hash.clone(),
            baseline: baseline.workload_hash.clone(),
        });
    }
    Ok(Normalized {
        total_cycles: ratio(Some(run.total_cycles as f64), Some(baseline.total_cycles as f64)).unwrap_or(1.0),
        mean_scan_latency: ratio(run.mean_scan_latency, baseline.mean_scan_latency),
        mean_unique_scopes: ratio(run.mean_unique_scopes, baseline.mean_unique_scopes),
        mean_pim_occupancy: ratio(run.mean_pim_occupancy, baseline.mean_pim_occupancy),
    })
}

/// Stable CSV column order.
pub const CSV_COLUMNS: [&str; 18] = [
    "axis",
    "value",
    "configuration",
    "seed",
    "total_cycles",
    "normalized_cycles",
    "scope_buffer_hit_rate",
    "mean_scan_latency",
    "mean_skip_ratio",
    "mean_pim_occupancy",
    "max_pim_occupancy",
    "mean_unique_scopes",
    "mean_mc_queue",
    "pim_ops",
    "scan_lines_flushed",
    "invariant_violations",
    "oracle_match",
    "workload_hash",
];

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

pub fn csv_header() -> String {
    CSV_COLUMNS.join(",")
}

pub fn csv_row(axis: &str, value: &str, r: &RunReport) -> String {
    [
        axis.to_string(),
        value.to_string(),
        r.configuration.clone(),
        r.seed.to_string(),
        r.total_cycles.to_string(),
        opt(r.normalized_cycles),
        opt(r.scope_buffer_hit_rate),
        opt(r.mean_scan_latency),
        opt(r.mean_skip_ratio),
        opt(r.mean_pim_occupancy),
        r.max_pim_occupancy.to_string(),
        opt(r.mean_unique_scopes),
        opt(r.mean_mc_queue),
        r.pim_ops.to_string(),
        r.scan_lines_flushed.to_string(),
        r.invariant_violations.to_string(),
        r.oracle_match.map(|b| b.to_string()).unwrap_or_default(),
        r.workload_hash.clone(),
    ]
    .join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(cycles: u64, hash: &str) -> RunReport {
        let m = RunMetrics {
            total_cycles: cycles,
            scan_latency: vec![(1, 10), (2, 30)],
            ..RunMetrics::default()
        };
        summarize(&m, "scope", "c", hash, 1, 0)
    }

    #[test]
    fn mean_of_two_samples() {
        assert_eq!(report(5, "w").mean_scan_latency, Some(20.0));
        assert_eq!(mean_of(&[]), None);
    }

    #[test]
    fn self_normalization_is_unity() {
        let r = report(1234, "w");
        let n = normalize(&r, &r).unwrap();
        assert_eq!(n.total_cycles, 1.0);
        assert_eq!(n.mean_scan_latency, Some(1.0));
    }

    #[test]
    fn normalized_run_time_is_a_cycle_ratio() {
        let n = normalize(&report(300, "w"), &report(200, "w")).unwrap();
        assert_eq!(n.total_cycles, 1.5);
    }

    #[test]
    fn mismatched_baseline_is_rejected() {
        assert!(matches!(
            normalize(&report(1, "a"), &report(1, "b")),
            Err(StatsError::BaselineMismatch { .. })
        ));
    }

    #[test]
    fn hit_rate_undefined_without_pim_ops() {
        assert_eq!(RunMetrics::default().llc_hit_rate(), None);
        assert_eq!(report(1, "w").scope_buffer_hit_rate, None);
    }

    #[test]
    fn skip_ratio_sample() {
        let m = RunMetrics {
            sbv_skips: vec![(0, 1928, 2048)],
            ..RunMetrics::default()
        };
        assert!((m.mean_skip_ratio().unwrap() - 0.9414).abs() < 1e-4);
    }

    #[test]
    fn csv_row_has_every_column() {
        let row = csv_row("scopes", "4", &report(10, "w"));
        assert_eq!(row.split(',').count(), CSV_COLUMNS.len());
    }

    #[test]
    fn hashing_is_stable() {
        assert_eq!(hash_json(&[1, 2]), hash_json(&[1, 2]));
        assert_ne!(hash_json(&[1, 2]), hash_json(&[2, 1]));
    }
}
