//! Simulator configuration and consistency-model selection.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{AddressMap, LayoutError, PimOpcode, LINE_SIZE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    Atomic,
    Store,
    Scope,
    ScopeRelaxed,
    Naive,
    SwFlush,
}

impl Model {
    pub const MODELS: [Model; 4] = [Model::Atomic, Model::Store, Model::Scope, Model::ScopeRelaxed];
    pub const ALL: [Model; 6] = [
        Model::Atomic,
        Model::Store,
        Model::Scope,
        Model::ScopeRelaxed,
        Model::Naive,
        Model::SwFlush,
    ];

    pub fn is_baseline(self) -> bool {
        matches!(self, Model::Naive | Model::SwFlush)
    }

    /// Whether the model's PIM ops are acknowledged by the controller.
    pub fn acks_pim(self) -> bool {
        matches!(self, Model::Atomic | Model::Store | Model::Scope)
    }

    pub fn label(self) -> &'static str {
        match self {
            Model::Atomic => "atomic",
            Model::Store => "store",
            Model::Scope => "scope",
            Model::ScopeRelaxed => "scope-relaxed",
            Model::Naive => "naive",
            Model::SwFlush => "sw-flush",
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Model {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Model::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| format!("unknown model `{s}`"))
    }
}

/// A model plus the uncacheable-PIM toggle: the unit a sweep iterates over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Configuration {
    pub model: Model,
    pub uncacheable: bool,
}

impl Configuration {
    pub const UNCACHEABLE: Configuration = Configuration {
        model: Model::Naive,
        uncacheable: true,
    };

    pub fn of(model: Model) -> Self {
        Configuration {
            model,
            uncacheable: false,
        }
    }

    /// The four models and two baselines.
    pub fn six() -> Vec<Configuration> {
        Model::ALL.into_iter().map(Configuration::of).collect()
    }

    pub fn label(self) -> &'static str {
        if self.uncacheable {
            "uncacheable"
        } else {
            self.model.label()
        }
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Configuration {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "uncacheable" {
            Ok(Configuration::UNCACHEABLE)
        } else {
            s.parse().map(Configuration::of)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheGeometry {
    pub size_bytes: u64,
    pub ways: u32,
}

impl CacheGeometry {
    pub fn sets(&self) -> u32 {
        (self.size_bytes / (self.ways as u64 * LINE_SIZE)) as u32
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScopeBufferGeometry {
    pub sets: u32,
    pub ways: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PimLatencies {
    pub filter: u64,
    pub mask: u64,
    pub aggregate: u64,
}

impl PimLatencies {
    pub const ZERO: PimLatencies = PimLatencies {
        filter: 0,
        mask: 0,
        aggregate: 0,
    };

    pub fn of(&self, op: PimOpcode) -> u64 {
        match op {
            PimOpcode::FilterEq | PimOpcode::FilterLt => self.filter,
            PimOpcode::MaskAnd | PimOpcode::MaskOr | PimOpcode::MaskNot => self.mask,
            PimOpcode::Aggregate => self.aggregate,
        }
    }
}

impl Default for PimLatencies {
    fn default() -> Self {
        PimLatencies {
            filter: 1024,
            mask: 64,
            aggregate: 2048,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PimConfig {
    /// Resident op capacity; `None` is unbounded.
    pub buffer_capacity: Option<usize>,
    pub latency: PimLatencies,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub base_latency: u64,
    pub jitter_max: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanCost {
    pub per_set: u64,
    pub per_line: u64,
    pub fixed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub cores: u16,
    pub l1: CacheGeometry,
    pub llc: CacheGeometry,
    pub llc_scope_buffer: ScopeBufferGeometry,
    pub l1_scope_buffer: ScopeBufferGeometry,
    pub model: Model,
    pub uncacheable: bool,
    pub pim: PimConfig,
    pub network: NetworkConfig,
    pub l1_latency: u64,
    pub llc_latency: u64,
    pub dram_latency: u64,
    pub mc_queue_depth: usize,
    pub write_buffer_depth: usize,
    pub scan: ScanCost,
    /// Store/Scope `pimfence` also drains plain stores when set.
    pub pimfence_orders_all: bool,
    pub pim_base: u64,
    pub scope_size: u64,
    pub n_scopes: u32,
    pub slots_per_scope: u32,
    /// Full invariant recomputation period in events; 0 checks only at the end.
    pub invariant_interval: u64,
    pub watchdog_events: u64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            cores: 6,
            l1: CacheGeometry {
                size_bytes: 16 * 1024,
                ways: 4,
            },
            llc: CacheGeometry {
                size_bytes: 2 * 1024 * 1024,
                ways: 16,
            },
            llc_scope_buffer: ScopeBufferGeometry { sets: 64, ways: 4 },
            l1_scope_buffer: ScopeBufferGeometry { sets: 16, ways: 1 },
            model: Model::Scope,
            uncacheable: false,
            pim: PimConfig {
                buffer_capacity: Some(16),
                latency: PimLatencies::default(),
            },
            network: NetworkConfig {
                base_latency: 8,
                jitter_max: 8,
            },
            l1_latency: 2,
            llc_latency: 10,
            dram_latency: 60,
            mc_queue_depth: 32,
            write_buffer_depth: 8,
            scan: ScanCost {
                per_set: 1,
                per_line: 4,
                fixed: 4,
            },
            pimfence_orders_all: true,
            pim_base: 0x4000_0000,
            scope_size: 2 * 1024 * 1024,
            n_scopes: 16,
            slots_per_scope: 1024,
            invariant_interval: 10_000,
            watchdog_events: 200_000_000,
            seed: 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {msg}")]
    Invalid { path: String, msg: String },
    #[error("address map: {0}")]
    Layout(#[from] LayoutError),
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

fn invalid(path: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.to_string(),
        msg: msg.into(),
    }
}

impl SimConfig {
    /// Small caches and wide jitter for litmus exploration.
    pub fn litmus(threads: u16) -> Self {
        SimConfig {
            cores: threads + 1,
            l1: CacheGeometry {
                size_bytes: 4 * 1024,
                ways: 4,
            },
            llc: CacheGeometry {
                size_bytes: 64 * 1024,
                ways: 16,
            },
            network: NetworkConfig {
                base_latency: 8,
                jitter_max: 256,
            },
            n_scopes: 4,
            invariant_interval: 1,
            ..SimConfig::default()
        }
    }

    pub fn configuration(&self) -> Configuration {
        Configuration {
            model: self.model,
            uncacheable: self.uncacheable,
        }
    }

    pub fn set_configuration(&mut self, c: Configuration) {
        self.model = c.model;
        self.uncacheable = c.uncacheable;
    }

    pub fn address_map(&self) -> Result<AddressMap, LayoutError> {
        AddressMap::new(self.pim_base, self.scope_size, self.n_scopes, self.slots_per_scope)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.cores == 0 || self.cores > 64 {
            return Err(invalid("cores", "must be in 1..=64"));
        }
        for (path, g) in [("l1", self.l1), ("llc", self.llc)] {
            if g.ways == 0 || g.sets() == 0 || !g.sets().is_power_of_two() {
                return Err(invalid(path, "sets must be a nonzero power of two"));
            }
            if g.sets() as u64 * g.ways as u64 * LINE_SIZE != g.size_bytes {
                return Err(invalid(path, "size must equal sets x ways x 64"));
            }
        }
        if self.llc.size_bytes < self.l1.size_bytes {
            return Err(invalid("llc.size_bytes", "inclusive LLC must be at least as large as an L1"));
        }
        for (path, g) in [("llc_scope_buffer", self.llc_scope_buffer), ("l1_scope_buffer", self.l1_scope_buffer)] {
            if g.sets == 0 || g.ways == 0 {
                return Err(invalid(path, "sets and ways must be nonzero"));
            }
        }
        if self.pim.buffer_capacity == Some(0) {
            return Err(invalid("pim.buffer_capacity", "must be positive or null (unbounded)"));
        }
        if self.uncacheable && self.model != Model::Naive {
            return Err(invalid("uncacheable", "only combines with the naive model"));
        }
        if self.mc_queue_depth == 0 {
            return Err(invalid("mc_queue_depth", "must be positive"));
        }
        if self.write_buffer_depth == 0 {
            return Err(invalid("write_buffer_depth", "must be positive"));
        }
        if self.pim_base < 4096 {
            return Err(invalid("pim_base", "leave at least one page of plain memory below the PIM region"));
        }
        self.address_map()?;
        Ok(())
    }
}
