//! Drives complete workload runs and parameter sweeps: builds the workload,
//! simulates it, checks the result against the sequential oracle and
//! summarizes it into a report.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, Configuration, Model, SimConfig};
use crate::engine::Chooser;
use crate::exec::Exec;
use crate::sim::{Job, RunOutcome, SimError, System};
use crate::stats::{csv_header, csv_row, hash_json, normalize, summarize, RunReport};
use crate::workloads::{self, reference_execute, WorkloadError, WorkloadSpec};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("sweep: {0}")]
    Sweep(String),
}

/// A finished run: the report plus everything needed to inspect it.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub report: RunReport,
    pub outcome: RunOutcome,
}

/// Whether the simulated final memory and every load match the oracle.
/// The naive baseline is exempt: it may legitimately read stale data.
fn oracle_check(cfg: &SimConfig, programs: &[crate::program::ThreadProgram], image: &crate::memory::Memory, out: &RunOutcome) -> Option<bool> {
    if cfg.model == Model::Naive && !cfg.uncacheable {
        return None;
    }
    let map = cfg.address_map().ok()?;
    let oracle = reference_execute(programs, image, &map);
    Some(oracle.memory == out.memory && oracle.loads == out.loads)
}

/// Runs `spec` once under `cfg` (its model, toggles and seed).
pub fn run_workload(cfg: &SimConfig, spec: &WorkloadSpec) -> Result<RunResult, RunError> {
    cfg.validate()?;
    let w = workloads::build(spec, cfg)?;
    let job = Job {
        programs: w.programs.clone(),
        init_memory: Some(w.image.clone()),
        ..Job::default()
    };
    let outcome = System::new(cfg.clone(), job, Chooser::random(cfg.seed))?.run()?;
    let mut report = summarize(
        &outcome.metrics,
        cfg.configuration().label(),
        &hash_json(cfg),
        &hash_json(spec),
        cfg.seed,
        outcome.violations.len(),
    );
    report.oracle_match = oracle_check(cfg, &w.programs, &w.image, &outcome);
    Ok(RunResult { report, outcome })
}

/// Parameter a sweep varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    Scopes,
    Threads,
    Llc,
    /// A single point: only the configuration varies.
    Model,
}

impl Axis {
    pub fn label(self) -> &'static str {
        match self {
            Axis::Scopes => "scopes",
            Axis::Threads => "threads",
            Axis::Llc => "llc",
            Axis::Model => "model",
        }
    }

    pub fn default_values(self) -> Vec<String> {
        let v: &[&str] = match self {
            Axis::Scopes => &["4", "16", "64"],
            Axis::Threads => &["4", "8"],
            Axis::Llc => &["2MiB", "8MiB"],
            Axis::Model => &["all"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }

    /// Applies one axis value to a copy of the base config and workload.
    pub fn apply(self, value: &str, cfg: &mut SimConfig, spec: &mut WorkloadSpec) -> Result<(), RunError> {
        let bad = || RunError::Sweep(format!("bad {} value `{value}`", self.label()));
        match self {
            Axis::Scopes => {
                let n: u32 = value.parse().map_err(|_| bad())?;
                spec.set_n_scopes(n);
                cfg.n_scopes = cfg.n_scopes.max(n);
            }
            Axis::Threads => {
                let n: usize = value.parse().map_err(|_| bad())?;
                spec.set_n_threads(n);
                if n > cfg.cores as usize {
                    cfg.cores = (2 * n).min(64) as u16;
                }
            }
            Axis::Llc => cfg.llc.size_bytes = parse_size(value).ok_or_else(bad)?,
            Axis::Model => {}
        }
        Ok(())
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Axis::Scopes, Axis::Threads, Axis::Llc, Axis::Model]
            .into_iter()
            .find(|a| a.label() == s)
            .ok_or_else(|| format!("unknown axis `{s}`"))
    }
}

/// Parses `2MiB`, `512KiB` or a plain byte count.
pub fn parse_size(s: &str) -> Option<u64> {
    let s = s.trim();
    let (num, mult) = if let Some(n) = s.strip_suffix("MiB") {
        (n, 1 << 20)
    } else if let Some(n) = s.strip_suffix("KiB") {
        (n, 1 << 10)
    } else {
        (s, 1)
    };
    num.trim().parse::<u64>().ok().map(|n| n * mult)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub report: RunReport,
}

/// One run per (axis value, configuration). `normalized_cycles` is filled
/// from the naive run of the same point when it is part of the sweep.
pub fn sweep(
    base: &SimConfig,
    spec: &WorkloadSpec,
    axis: Axis,
    values: &[String],
    configs: &[Configuration],
    exec: Exec,
) -> Result<Vec<SweepRow>, RunError> {
    let mut points = Vec::new();
    for v in values {
        for &c in configs {
            let mut cfg = base.clone();
            let mut s = spec.clone();
            axis.apply(v, &mut cfg, &mut s)?;
            cfg.set_configuration(c);
            points.push((v.clone(), cfg, s));
        }
    }
    let results = exec.map(&points, |(_, cfg, s)| run_workload(cfg, s).map(|r| r.report));
    let mut rows = Vec::with_capacity(points.len());
    for ((v, _, _), r) in points.iter().zip(results) {
        rows.push(SweepRow {
            axis: axis.label().to_string(),
            value: v.clone(),
            report: r?,
        });
    }
    let naive: Vec<(String, RunReport)> = rows
        .iter()
        .filter(|r| r.report.configuration == Model::Naive.label())
        .map(|r| (r.value.clone(), r.report.clone()))
        .collect();
    for row in &mut rows {
        if let Some((_, base)) = naive.iter().find(|(v, _)| *v == row.value) {
            let n = normalize(&row.report, base).map_err(|e| RunError::Sweep(e.to_string()))?;
            row.report.normalized_cycles = Some(n.total_cycles);
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = csv_header();
    out.push('\n');
    for r in rows {
        out.push_str(&csv_row(&r.axis, &r.value, &r.report));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workloads::{QueryTemplate, YcsbConfig};

    fn small_ycsb() -> WorkloadSpec {
        WorkloadSpec::Ycsb(YcsbConfig {
            n_ops: 40,
            n_records: 512,
            n_scopes: 4,
            scan_len_max: 20,
            ..YcsbConfig::default()
        })
    }

    #[test]
    fn sizes_parse() {
        assert_eq!(parse_size("2MiB"), Some(2 << 20));
        assert_eq!(parse_size("512KiB"), Some(512 << 10));
        assert_eq!(parse_size("4096"), Some(4096));
        assert_eq!(parse_size("lots"), None);
    }

    #[test]
    fn small_runs_match_the_oracle() {
        for c in Configuration::six().into_iter().chain([Configuration::UNCACHEABLE]) {
            let mut cfg = SimConfig::default();
            cfg.set_configuration(c);
            let r = run_workload(&cfg, &small_ycsb()).unwrap();
            assert_eq!(r.report.invariant_violations, 0, "{c}: {:?}", r.outcome.violations);
            assert_ne!(r.report.oracle_match, Some(false), "{c}");
            assert_eq!(r.report.configuration, c.label());
        }
    }

    #[test]
    fn sweep_counts_rows_and_normalizes_to_naive() {
        let spec = WorkloadSpec::Query(QueryTemplate {
            repetitions: 2,
            ..QueryTemplate::default()
        });
        let values = vec!["4".to_string(), "8".to_string()];
        let rows = sweep(&SimConfig::default(), &spec, Axis::Scopes, &values, &Configuration::six(), Exec::Sequential).unwrap();
        assert_eq!(rows.len(), 12);
        for r in rows.iter().filter(|r| r.report.configuration == "naive") {
            assert_eq!(r.report.normalized_cycles, Some(1.0));
        }
        assert!(rows.iter().all(|r| r.report.normalized_cycles.is_some()));
        assert_eq!(sweep_csv(&rows).lines().count(), 13);
    }

    #[test]
    fn threads_axis_raises_the_core_count() {
        let mut cfg = SimConfig::default();
        let mut spec = small_ycsb();
        spec.set_n_scopes(8);
        Axis::Threads.apply("8", &mut cfg, &mut spec).unwrap();
        assert_eq!(cfg.cores, 16);
        assert_eq!(spec.n_threads(), 8);
    }
}
