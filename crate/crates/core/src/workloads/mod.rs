//! Workload generators: YCSB-style scans and inserts over PIM-resident
//! records, and analytic query templates. Each generator produces
//! model-independent logical operations that an emitter lowers to thread
//! programs with the fencing the configuration needs.

mod query;
mod reference;
mod ycsb;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Configuration, Model, SimConfig};
use crate::memory::Memory;
use crate::program::{Stmt, ThreadProgram};
use crate::types::{AddressMap, LineAddr, PhysAddr, PimOpDescriptor, ScopeId};

pub use query::{QueryKind, QueryTemplate};
pub use reference::{reference_execute, ReferenceRun};
pub use ycsb::{sample_scan_len, YcsbConfig, ZipfBase};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("workload.{path}: {msg}")]
    Invalid { path: String, msg: String },
    #[error("workload: {0}")]
    Parse(String),
}

pub(crate) fn invalid(path: &str, msg: impl Into<String>) -> WorkloadError {
    WorkloadError::Invalid {
        path: path.to_string(),
        msg: msg.into(),
    }
}

/// A workload document: the JSON a `run` or `sweep` command reads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WorkloadSpec {
    Ycsb(YcsbConfig),
    Query(QueryTemplate),
}

impl WorkloadSpec {
    pub fn from_json(text: &str) -> Result<Self, WorkloadError> {
        serde_json::from_str(text).map_err(|e| WorkloadError::Parse(e.to_string()))
    }

    pub fn n_scopes(&self) -> u32 {
        match self {
            WorkloadSpec::Ycsb(c) => c.n_scopes,
            WorkloadSpec::Query(q) => q.n_scopes,
        }
    }

    pub fn n_threads(&self) -> usize {
        match self {
            WorkloadSpec::Ycsb(c) => c.n_threads,
            WorkloadSpec::Query(q) => q.n_threads,
        }
    }

    pub fn set_n_scopes(&mut self, n: u32) {
        match self {
            WorkloadSpec::Ycsb(c) => c.n_scopes = n,
            WorkloadSpec::Query(q) => q.n_scopes = n,
        }
    }

    pub fn set_n_threads(&mut self, n: usize) {
        match self {
            WorkloadSpec::Ycsb(c) => c.n_threads = n,
            WorkloadSpec::Query(q) => q.n_threads = n,
        }
    }

    /// Generates the workload's logical operations and initial image.
    pub fn build(&self, map: &AddressMap) -> Result<Logical, WorkloadError> {
        match self {
            WorkloadSpec::Ycsb(c) => c.generate(map),
            WorkloadSpec::Query(q) => q.generate(map),
        }
    }
}

/// One model-independent operation of a thread.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LogicalOp {
    /// PIM ops per scope, then loads of the results.
    Scan {
        ops: Vec<(ScopeId, Vec<PimOpDescriptor>)>,
        reads: Vec<PhysAddr>,
    },
    Insert { writes: Vec<(PhysAddr, u64)> },
}

#[derive(Clone, Debug)]
pub struct Logical {
    pub threads: Vec<Vec<LogicalOp>>,
    pub image: Memory,
}

/// A generated workload ready for one configuration.
#[derive(Clone, Debug)]
pub struct Workload {
    pub programs: Vec<ThreadProgram>,
    pub image: Memory,
}

/// Distributes `n_scopes` over `n_threads` round-robin.
pub(crate) fn thread_scopes(n_scopes: u32, n_threads: usize) -> Vec<Vec<ScopeId>> {
    let mut out = vec![Vec::new(); n_threads];
    for s in 0..n_scopes {
        out[s as usize % n_threads].push(ScopeId(s));
    }
    out
}

impl Logical {
    /// Lowers the logical operations with the fences `c` requires.
    pub fn emit(&self, c: Configuration, map: &AddressMap) -> Workload {
        let programs = self.threads.iter().map(|ops| emit_thread(ops, c, map)).collect();
        Workload {
            programs,
            image: self.image.clone(),
        }
    }
}

fn emit_thread(ops: &[LogicalOp], c: Configuration, map: &AddressMap) -> ThreadProgram {
    let mut out = Vec::new();
    let mut touched: BTreeMap<ScopeId, BTreeSet<LineAddr>> = BTreeMap::new();
    let sw_flush = c.model == Model::SwFlush && !c.uncacheable;
    // The baselines share one fence skeleton and differ only in caching.
    let baseline = c.model.is_baseline() || c.uncacheable;
    let touch = |touched: &mut BTreeMap<ScopeId, BTreeSet<LineAddr>>, a: PhysAddr| {
        if let Some(s) = map.scope_of(a) {
            touched.entry(s).or_default().insert(a.line());
        }
    };
    for op in ops {
        out.push(Stmt::Phase);
        match op {
            LogicalOp::Insert { writes } => {
                for &(addr, val) in writes {
                    out.push(Stmt::Store { addr, val });
                    touch(&mut touched, addr);
                }
            }
            LogicalOp::Scan { ops, reads } => {
                if sw_flush {
                    for (s, _) in ops {
                        for line in touched.remove(s).unwrap_or_default() {
                            out.push(Stmt::Flush(line.base()));
                        }
                    }
                }
                if baseline {
                    out.push(Stmt::MemFence);
                }
                for (_, list) in ops {
                    out.extend(list.iter().map(|&d| Stmt::Pim(d)));
                }
                if c.model == Model::ScopeRelaxed {
                    out.extend(ops.iter().map(|&(s, _)| Stmt::ScopeFence(s)));
                }
                if baseline {
                    out.push(Stmt::PimFence);
                }
                for &addr in reads {
                    out.push(Stmt::Load { addr, reg: None });
                    touch(&mut touched, addr);
                }
            }
        }
    }
    ThreadProgram { stmts: out }
}

/// Builds a workload for `cfg`'s configuration, checking that it fits the
/// configured PIM region.
pub fn build(spec: &WorkloadSpec, cfg: &SimConfig) -> Result<Workload, WorkloadError> {
    if spec.n_scopes() > cfg.n_scopes {
        return Err(invalid(
            "n_scopes",
            format!("{} scopes exceed the configured {}", spec.n_scopes(), cfg.n_scopes),
        ));
    }
    let map = cfg
        .address_map()
        .map_err(|e| WorkloadError::Parse(e.to_string()))?;
    Ok(spec.build(&map)?.emit(cfg.configuration(), &map))
}
