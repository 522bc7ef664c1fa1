//! Experiment recipes: JSON documents naming a config, a workload, an
//! action and the properties its results must satisfy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Configuration, SimConfig};
use crate::exec::Exec;
use crate::litmus::{builtin_test, explore, verdict, ExploreMode, Verdict};
use crate::runner::{sweep, Axis, RunError, SweepRow};
use crate::workloads::{self, WorkloadSpec};

/// `(file name, text)` of every shipped recipe.
pub const RECIPES: [(&str, &str); 8] = [
    ("fig1-cycle.json", include_str!("../recipes/fig1-cycle.json")),
    ("model-litmus.json", include_str!("../recipes/model-litmus.json")),
    ("ycsb-invariants.json", include_str!("../recipes/ycsb-invariants.json")),
    ("uc-vs-flush.json", include_str!("../recipes/uc-vs-flush.json")),
    ("interleaving.json", include_str!("../recipes/interleaving.json")),
    ("zero-latency.json", include_str!("../recipes/zero-latency.json")),
    ("unbounded-buffer.json", include_str!("../recipes/unbounded-buffer.json")),
    ("llc-size.json", include_str!("../recipes/llc-size.json")),
];

#[derive(Debug, Error)]
pub enum RecipeError {
    #[error("recipe {name}: {msg}")]
    Invalid { name: String, msg: String },
    #[error("recipe {name}: {source}")]
    Run { name: String, source: RunError },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Action {
    /// One run per configuration.
    Run { configs: Vec<String> },
    Sweep {
        axis: Axis,
        values: Vec<String>,
        configs: Vec<String>,
    },
    /// Exhaustive exploration of built-in litmus tests.
    Litmus {
        tests: Vec<String>,
        configs: Vec<String>,
        depth_bound: usize,
        max_runs: u64,
    },
}

/// A checkable claim about a recipe's results. Cycle comparisons hold at
/// every sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Property {
    LitmusPass,
    NoViolations,
    OracleMatch,
    /// Total cycles strictly increase along `configs`.
    StrictOrder { configs: Vec<String> },
    /// Total cycles never decrease along `configs`.
    Order { configs: Vec<String> },
    /// `num / den` total-cycle ratio strictly increases across the points.
    RatioGrows { num: String, den: String },
    /// `metric` of `left` is at least that of `right`.
    AtLeast { metric: String, left: String, right: String },
    /// Largest and smallest total cycles among `configs` differ by at most
    /// `pct` percent of the smallest.
    WithinPct { configs: Vec<String>, pct: f64 },
    /// `metric` of `config` strictly increases across the points.
    Increases { metric: String, config: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertySpec {
    #[serde(flatten)]
    pub property: Property,
    /// An informational property is evaluated and reported but never fails
    /// the recipe.
    #[serde(default = "yes")]
    pub required: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeDoc {
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub criteria: Vec<String>,
    #[serde(default)]
    pub config: serde_json::Value,
    #[serde(default)]
    pub workload: Option<WorkloadSpec>,
    pub action: Action,
    pub properties: Vec<PropertySpec>,
}

/// A parsed and validated recipe.
#[derive(Clone, Debug)]
pub struct Recipe {
    pub doc: RecipeDoc,
    pub config: SimConfig,
    pub configs: Vec<Configuration>,
}

fn parse_configs(list: &[String]) -> Result<Vec<Configuration>, String> {
    if list.len() == 1 && list[0] == "all" {
        return Ok(Configuration::six());
    }
    list.iter().map(|s| s.parse()).collect()
}

impl Recipe {
    /// Parses a recipe, rejecting invalid configs, workloads, axis values
    /// and configuration names up front.
    pub fn from_json(text: &str) -> Result<Recipe, RecipeError> {
        let doc: RecipeDoc = serde_json::from_str(text).map_err(|e| RecipeError::Invalid {
            name: "?".into(),
            msg: e.to_string(),
        })?;
        let bad = |msg: String| RecipeError::Invalid {
            name: doc.name.clone(),
            msg,
        };
        let config = if doc.config.is_null() {
            SimConfig::default()
        } else {
            SimConfig::from_json(&doc.config.to_string()).map_err(|e| bad(format!("config.{e}")))?
        };
        let configs = match &doc.action {
            Action::Run { configs } | Action::Sweep { configs, .. } | Action::Litmus { configs, .. } => {
                parse_configs(configs).map_err(bad)?
            }
        };
        match &doc.action {
            Action::Litmus { tests, .. } => {
                for t in tests {
                    if builtin_test(t).is_none() {
                        return Err(bad(format!("unknown litmus test `{t}`")));
                    }
                }
            }
            action => {
                let spec = doc.workload.as_ref().ok_or_else(|| bad("a run or sweep needs a workload".into()))?;
                let (axis, values) = match action {
                    Action::Sweep { axis, values, .. } => (*axis, values.clone()),
                    _ => (Axis::Model, Axis::Model.default_values()),
                };
                for v in &values {
                    let (mut cfg, mut s) = (config.clone(), spec.clone());
                    axis.apply(v, &mut cfg, &mut s).map_err(|e| bad(e.to_string()))?;
                    cfg.validate().map_err(|e| bad(format!("config at {axis}={v}: {e}")))?;
                    workloads::build(&s, &cfg).map_err(|e| bad(format!("at {axis}={v}: {e}")))?;
                }
            }
        }
        Ok(Recipe { doc, config, configs })
    }

    pub fn name(&self) -> &str {
        &self.doc.name
    }

    /// The same recipe shrunk to the smallest workload that still exercises
    /// every point: few operations, one repetition.
    pub fn smallest(&self) -> Recipe {
        let mut r = self.clone();
        match r.doc.workload.as_mut() {
            Some(WorkloadSpec::Ycsb(y)) => y.n_ops = y.n_ops.min(2 * y.n_threads as u64 + 8),
            Some(WorkloadSpec::Query(q)) => q.repetitions = 1,
            None => {}
        }
        r
    }
}

/// Evaluated property.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PropertyResult {
    pub property: Property,
    pub required: bool,
    pub holds: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecipeReport {
    pub name: String,
    pub rows: Vec<SweepRow>,
    pub verdicts: Vec<Verdict>,
    pub properties: Vec<PropertyResult>,
    pub pass: bool,
}

/// Results grouped by sweep point, in axis order, each keyed by
/// configuration label.
fn points(rows: &[SweepRow]) -> Vec<(String, BTreeMap<String, &SweepRow>)> {
    let mut out: Vec<(String, BTreeMap<String, &SweepRow>)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|(v, _)| *v == r.value) {
            Some((_, m)) => {
                m.insert(r.report.configuration.clone(), r);
            }
            None => out.push((r.value.clone(), BTreeMap::from([(r.report.configuration.clone(), r)]))),
        }
    }
    out
}

fn metric(row: &SweepRow, name: &str) -> Result<f64, String> {
    let v = serde_json::to_value(&row.report).expect("report serializes");
    v.get(name)
        .ok_or_else(|| format!("unknown metric `{name}`"))?
        .as_f64()
        .ok_or_else(|| format!("metric `{name}` is undefined for {}", row.report.configuration))
}

fn lookup<'a>(m: &BTreeMap<String, &'a SweepRow>, c: &str, at: &str) -> Result<&'a SweepRow, String> {
    m.get(c).copied().ok_or_else(|| format!("no `{c}` run at point {at}"))
}

/// Evaluates `p`; `Err` means it could not be evaluated at all.
pub fn evaluate(p: &Property, rows: &[SweepRow], verdicts: &[Verdict]) -> Result<(bool, String), String> {
    let pts = points(rows);
    let cycles = |m: &BTreeMap<String, &SweepRow>, c: &str, at: &str| lookup(m, c, at).map(|r| r.report.total_cycles);
    match p {
        Property::LitmusPass => {
            if verdicts.is_empty() {
                return Err("no litmus verdicts".into());
            }
            let failed: Vec<String> = verdicts
                .iter()
                .filter(|v| !v.pass)
                .map(|v| format!("{}@{}", v.test, v.configuration))
                .collect();
            Ok((failed.is_empty(), format!("{} verdicts, failing: {failed:?}", verdicts.len())))
        }
        Property::NoViolations => {
            let n: usize = rows.iter().map(|r| r.report.invariant_violations).sum();
            Ok((n == 0, format!("{n} violations over {} runs", rows.len())))
        }
        Property::OracleMatch => {
            let bad: Vec<String> = rows
                .iter()
                .filter(|r| r.report.oracle_match == Some(false))
                .map(|r| format!("{}@{}", r.report.configuration, r.value))
                .collect();
            let checked = rows.iter().filter(|r| r.report.oracle_match.is_some()).count();
            Ok((bad.is_empty() && checked > 0, format!("{checked} runs checked, mismatches: {bad:?}")))
        }
        Property::StrictOrder { configs } | Property::Order { configs } => {
            let strict = matches!(p, Property::StrictOrder { .. });
            let mut ok = true;
            let mut detail = Vec::new();
            for (at, m) in &pts {
                let cs = configs.iter().map(|c| cycles(m, c, at)).collect::<Result<Vec<_>, _>>()?;
                ok &= cs.windows(2).all(|w| if strict { w[0] < w[1] } else { w[0] <= w[1] });
                detail.push(format!("{at}: {cs:?}"));
            }
            Ok((ok, detail.join("; ")))
        }
        Property::RatioGrows { num, den } => {
            let mut ratios = Vec::new();
            for (at, m) in &pts {
                ratios.push(cycles(m, num, at)? as f64 / cycles(m, den, at)? as f64);
            }
            if ratios.len() < 2 {
                return Err("needs at least two points".into());
            }
            let ok = ratios.windows(2).all(|w| w[0] < w[1]);
            Ok((ok, format!("{num}/{den} ratios {ratios:.3?}")))
        }
        Property::AtLeast { metric: name, left, right } => {
            let mut ok = true;
            let mut detail = Vec::new();
            for (at, m) in &pts {
                let l = metric(lookup(m, left, at)?, name)?;
                let r = metric(lookup(m, right, at)?, name)?;
                ok &= l >= r;
                detail.push(format!("{at}: {left} {l:.4} vs {right} {r:.4}"));
            }
            Ok((ok, detail.join("; ")))
        }
        Property::WithinPct { configs, pct } => {
            let mut ok = true;
            let mut detail = Vec::new();
            for (at, m) in &pts {
                let cs = configs.iter().map(|c| cycles(m, c, at)).collect::<Result<Vec<_>, _>>()?;
                let lo = *cs.iter().min().expect("nonempty") as f64;
                let hi = *cs.iter().max().expect("nonempty") as f64;
                let spread = 100.0 * (hi - lo) / lo;
                ok &= spread <= *pct;
                detail.push(format!("{at}: spread {spread:.2}%"));
            }
            Ok((ok, detail.join("; ")))
        }
        Property::Increases { metric: name, config } => {
            let mut vals = Vec::new();
            for (at, m) in &pts {
                vals.push(metric(lookup(m, config, at)?, name)?);
            }
            let ok = vals.len() >= 2 && vals.windows(2).all(|w| w[0] < w[1]);
            Ok((ok, format!("{config} {name}: {vals:.3?}")))
        }
    }
}

/// Runs a recipe and evaluates its properties.
pub fn run_recipe(r: &Recipe, exec: Exec) -> Result<RecipeReport, RecipeError> {
    let wrap = |source| RecipeError::Run {
        name: r.name().to_string(),
        source,
    };
    let (rows, verdicts) = match &r.doc.action {
        Action::Litmus {
            tests,
            depth_bound,
            max_runs,
            ..
        } => {
            let mode = ExploreMode::Exhaustive {
                depth_bound: *depth_bound,
                max_runs: *max_runs,
            };
            let mut vs = Vec::new();
            for name in tests {
                let t = builtin_test(name).expect("validated at parse");
                for &c in &r.configs {
                    vs.push(verdict(&explore(&t, c, mode, exec), &t));
                }
            }
            (Vec::new(), vs)
        }
        action => {
            let spec = r.doc.workload.as_ref().expect("validated at parse");
            let (axis, values) = match action {
                Action::Sweep { axis, values, .. } => (*axis, values.clone()),
                _ => (Axis::Model, Axis::Model.default_values()),
            };
            (sweep(&r.config, spec, axis, &values, &r.configs, exec).map_err(wrap)?, Vec::new())
        }
    };
    let mut properties = Vec::new();
    for ps in &r.doc.properties {
        let (holds, detail) = evaluate(&ps.property, &rows, &verdicts).map_err(|msg| RecipeError::Invalid {
            name: r.name().to_string(),
            msg: format!("property {:?} cannot be evaluated: {msg}", ps.property),
        })?;
        properties.push(PropertyResult {
            property: ps.property.clone(),
            required: ps.required,
            holds,
            detail,
        });
    }
    let pass = properties.iter().all(|p| p.holds || !p.required);
    Ok(RecipeReport {
        name: r.name().to_string(),
        rows,
        verdicts,
        properties,
        pass,
    })
}

pub fn shipped() -> Result<Vec<Recipe>, RecipeError> {
    RECIPES.iter().map(|(_, text)| Recipe::from_json(text)).collect()
}

pub fn shipped_recipe(name: &str) -> Option<Recipe> {
    shipped().ok()?.into_iter().find(|r| r.name() == name)
}

/// Every shipped recipe parses, runs at its smallest scale and has every
/// property evaluate. Property outcomes at that scale are not judged.
pub fn validate_recipes(exec: Exec) -> Result<Vec<RecipeReport>, RecipeError> {
    shipped()?.iter().map(|r| run_recipe(&r.smallest(), exec)).collect()
}
