//! Litmus tests: a small text format for multi-threaded programs with PIM
//! ops, an explorer over the simulator's choice points, and verdicts.
//!
//! ```text
//! litmus MP
//! loc X = 0x1000
//! loc A = S0:0x40
//! init X = 0
//! skew 64
//! P0:
//!   st X 1
//!   st A 1
//! P1:
//!   ld A r0
//!   ld X r1
//! interloper ld X after P0
//! forbidden 1:r0=1 /\ 1:r1=0
//! required [sw-flush] 1:r0=1 \/ I:r0=1
//! ```
//!
//! `S<n>:<offset>` places a location inside a scope. Conditions name
//! registers as `<thread>:r<n>` (`I:` for the interloper) and final memory
//! as `<loc>=<value>`. An optional `[configs]` list restricts a condition
//! to some configurations; `exists` is a synonym for `allowed`.

mod explore;
mod suite;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Configuration, SimConfig};
use crate::program::{parse_num, parse_scope, Symbols, ThreadProgram};
use crate::types::PhysAddr;

pub use explore::{explore, verdict, verdict_table, ConditionVerdict, ExploreMode, Observation, OutcomeSet, Repro, Status, Verdict};
pub use suite::{builtin, builtin_names, builtin_test, CORPUS};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("{name}: line {line}: {msg}")]
pub struct LitmusError {
    pub name: String,
    pub line: usize,
    pub msg: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Expectation {
    Allowed,
    Forbidden,
    Required,
}

impl fmt::Display for Expectation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Expectation::Allowed => "allowed",
            Expectation::Forbidden => "forbidden",
            Expectation::Required => "required",
        })
    }
}

/// Who owns a register named in a condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegOwner {
    Thread(usize),
    Interloper,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Atom {
    Reg { owner: RegOwner, reg: u8, val: u64 },
    Mem { loc: String, val: u64 },
}

impl Atom {
    /// Key of the valuation entry this atom reads.
    pub fn key(&self) -> String {
        match self {
            Atom::Reg {
                owner: RegOwner::Thread(t),
                reg,
                ..
            } => format!("{t}:r{reg}"),
            Atom::Reg {
                owner: RegOwner::Interloper,
                reg,
                ..
            } => format!("I:r{reg}"),
            Atom::Mem { loc, .. } => loc.clone(),
        }
    }

    fn val(&self) -> u64 {
        match *self {
            Atom::Reg { val, .. } | Atom::Mem { val, .. } => val,
        }
    }
}

/// A predicate in disjunctive normal form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Predicate {
    pub clauses: Vec<Vec<Atom>>,
}

impl Predicate {
    pub fn holds(&self, valuation: &BTreeMap<String, u64>) -> bool {
        self.clauses
            .iter()
            .any(|c| c.iter().all(|a| valuation.get(&a.key()) == Some(&a.val())))
    }

    fn parse(text: &str) -> Result<Self, String> {
        let mut clauses = Vec::new();
        for disj in text.split("\\/") {
            let mut atoms = Vec::new();
            for conj in disj.split("/\\") {
                let t = conj.trim().trim_start_matches('(').trim_end_matches(')').trim();
                atoms.push(parse_atom(t)?);
            }
            clauses.push(atoms);
        }
        Ok(Predicate { clauses })
    }
}

fn parse_atom(t: &str) -> Result<Atom, String> {
    let (lhs, rhs) = t.split_once('=').ok_or_else(|| format!("expected `name=value`, got `{t}`"))?;
    let val = parse_num(rhs.trim()).ok_or_else(|| format!("bad value `{}`", rhs.trim()))?;
    let lhs = lhs.trim();
    if let Some((owner, reg)) = lhs.split_once(':') {
        let owner = if owner == "I" {
            RegOwner::Interloper
        } else {
            RegOwner::Thread(owner.parse().map_err(|_| format!("bad thread `{owner}`"))?)
        };
        let reg = reg
            .strip_prefix('r')
            .and_then(|r| r.parse().ok())
            .ok_or_else(|| format!("bad register `{reg}`"))?;
        Ok(Atom::Reg { owner, reg, val })
    } else {
        let loc = lhs.trim_start_matches('[').trim_end_matches(']').to_string();
        Ok(Atom::Mem { loc, val })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Condition {
    pub expect: Expectation,
    /// `None` applies the condition to every configuration.
    pub configs: Option<Vec<Configuration>>,
    pub pred: Predicate,
    pub text: String,
}

impl Condition {
    pub fn applies_to(&self, c: Configuration) -> bool {
        self.configs.as_ref().is_none_or(|cs| cs.contains(&c))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LocSpec {
    Abs(u64),
    InScope { scope: u32, offset: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LitmusTest {
    pub name: String,
    /// Base configuration; the explorer sets the model.
    pub config: SimConfig,
    pub locs: Vec<(String, PhysAddr)>,
    pub init: Vec<(String, u64)>,
    pub threads: Vec<ThreadProgram>,
    /// `(location, thread)`: the interloper loads the location once that
    /// thread reaches a nondeterministically chosen statement.
    pub interloper: Option<(String, usize)>,
    pub skew: u64,
    pub conditions: Vec<Condition>,
}

const KEYWORDS: [&str; 10] = [
    "litmus",
    "loc",
    "init",
    "option",
    "skew",
    "interloper",
    "required",
    "forbidden",
    "allowed",
    "exists",
];

fn is_thread_header(line: &str) -> Option<usize> {
    line.strip_prefix('P')?.strip_suffix(':')?.parse().ok()
}

/// Sets a dotted-path field of the configuration from a JSON literal.
fn apply_option(cfg: &SimConfig, path: &str, value: &str) -> Result<SimConfig, String> {
    let mut json = serde_json::to_value(cfg).map_err(|e| e.to_string())?;
    let mut node = &mut json;
    for part in path.split('.') {
        node = node
            .get_mut(part)
            .ok_or_else(|| format!("unknown option `{path}`"))?;
    }
    *node = serde_json::from_str(value).map_err(|e| format!("option `{path}`: {e}"))?;
    serde_json::from_value(json).map_err(|e| format!("option `{path}`: {e}"))
}

impl LitmusTest {
    pub fn parse(text: &str) -> Result<Self, LitmusError> {
        let mut name = String::from("unnamed");
        let err = |name: &str, line: usize, msg: String| LitmusError {
            name: name.to_string(),
            line,
            msg,
        };
        let mut locs: Vec<(usize, String, LocSpec)> = Vec::new();
        let mut init: Vec<(String, u64)> = Vec::new();
        let mut options: Vec<(usize, String, String)> = Vec::new();
        let mut skew = 0;
        let mut threads: Vec<(usize, Vec<(usize, String)>)> = Vec::new();
        let mut interloper: Option<(String, usize)> = None;
        let mut conds: Vec<(usize, Expectation, Option<Vec<Configuration>>, String)> = Vec::new();
        let mut current: Option<usize> = None;

        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(t) = is_thread_header(line) {
                if t != threads.len() {
                    return Err(err(&name, ln, format!("expected P{}:", threads.len())));
                }
                threads.push((ln, Vec::new()));
                current = Some(t);
                continue;
            }
            let (head, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let rest = rest.trim();
            if !KEYWORDS.contains(&head) {
                match current {
                    Some(t) => threads[t].1.push((ln, line.to_string())),
                    None => return Err(err(&name, ln, format!("unexpected `{head}` outside a thread"))),
                }
                continue;
            }
            current = None;
            match head {
                "litmus" => name = rest.to_string(),
                "loc" => {
                    let (n, spec) = rest
                        .split_once('=')
                        .ok_or_else(|| err(&name, ln, "expected `loc NAME = ADDR`".into()))?;
                    let spec = spec.trim();
                    let parsed = match spec.split_once(':') {
                        Some((s, off)) => LocSpec::InScope {
                            scope: parse_scope(s).map_err(|m| err(&name, ln, m))?.0,
                            offset: parse_num(off).ok_or_else(|| err(&name, ln, format!("bad offset `{off}`")))?,
                        },
                        None => LocSpec::Abs(parse_num(spec).ok_or_else(|| err(&name, ln, format!("bad address `{spec}`")))?),
                    };
                    locs.push((ln, n.trim().to_string(), parsed));
                }
                "init" => {
                    for a in rest.split(';').map(str::trim).filter(|a| !a.is_empty()) {
                        let (n, v) = a
                            .split_once('=')
                            .ok_or_else(|| err(&name, ln, format!("expected `NAME = VALUE`, got `{a}`")))?;
                        let v = parse_num(v.trim()).ok_or_else(|| err(&name, ln, format!("bad value `{}`", v.trim())))?;
                        init.push((n.trim().to_string(), v));
                    }
                }
                "option" => {
                    let (k, v) = rest
                        .split_once('=')
                        .ok_or_else(|| err(&name, ln, "expected `option PATH = JSON`".into()))?;
                    options.push((ln, k.trim().to_string(), v.trim().to_string()));
                }
                "skew" => skew = parse_num(rest).ok_or_else(|| err(&name, ln, format!("bad skew `{rest}`")))?,
                "interloper" => {
                    let toks: Vec<&str> = rest.split_whitespace().collect();
                    let ["ld", loc, "after", t] = toks[..] else {
                        return Err(err(&name, ln, "expected `interloper ld LOC after P<n>`".into()));
                    };
                    let t = t
                        .strip_prefix('P')
                        .and_then(|n| n.parse().ok())
                        .ok_or_else(|| err(&name, ln, format!("bad thread `{t}`")))?;
                    interloper = Some((loc.to_string(), t));
                }
                _ => {
                    let expect = match head {
                        "required" => Expectation::Required,
                        "forbidden" => Expectation::Forbidden,
                        _ => Expectation::Allowed,
                    };
                    let (configs, pred) = match rest.strip_prefix('[') {
                        Some(r) => {
                            let (list, pred) = r
                                .split_once(']')
                                .ok_or_else(|| err(&name, ln, "unclosed configuration list".into()))?;
                            let cs = list
                                .split([',', ' '])
                                .filter(|s| !s.is_empty())
                                .map(Configuration::from_str)
                                .collect::<Result<Vec<_>, _>>()
                                .map_err(|m| err(&name, ln, m))?;
                            (Some(cs), pred.trim().to_string())
                        }
                        None => (None, rest.to_string()),
                    };
                    conds.push((ln, expect, configs, pred));
                }
            }
        }

        let mut config = SimConfig::litmus(threads.len().max(1) as u16);
        for (ln, k, v) in &options {
            config = apply_option(&config, k, v).map_err(|m| err(&name, *ln, m))?;
        }
        let map = config.address_map().map_err(|e| err(&name, 0, e.to_string()))?;
        let mut syms = Symbols::default();
        let mut resolved = Vec::new();
        for (ln, n, spec) in locs {
            let addr = match spec {
                LocSpec::Abs(a) => a,
                LocSpec::InScope { scope, offset } => {
                    if scope >= map.n_scopes || offset >= config.scope_size {
                        return Err(err(&name, ln, format!("S{scope}:{offset:#x} is outside the PIM region")));
                    }
                    map.scope_base(crate::types::ScopeId(scope)).0 + offset
                }
            };
            if addr % 8 != 0 {
                return Err(err(&name, ln, format!("location `{n}` is not 8-byte aligned")));
            }
            syms.insert(&n, addr);
            resolved.push((n, PhysAddr(addr)));
        }
        let known = |n: &str| syms.addrs.contains_key(n);
        for (n, _) in &init {
            if !known(n) {
                return Err(err(&name, 0, format!("init of undeclared location `{n}`")));
            }
        }
        let mut programs = Vec::new();
        for (hdr, body) in &threads {
            let mut stmts = Vec::new();
            for (ln, s) in body {
                stmts.push(crate::program::parse_stmt(s, &syms).map_err(|m| err(&name, *ln, m))?);
            }
            if stmts.is_empty() {
                return Err(err(&name, *hdr, "empty thread".into()));
            }
            programs.push(ThreadProgram { stmts });
        }
        if let Some((loc, t)) = &interloper {
            if !known(loc) {
                return Err(err(&name, 0, format!("interloper loads undeclared location `{loc}`")));
            }
            if *t >= programs.len() {
                return Err(err(&name, 0, format!("interloper follows missing thread P{t}")));
            }
        }
        let mut conditions = Vec::new();
        for (ln, expect, configs, text) in conds {
            let pred = Predicate::parse(&text).map_err(|m| err(&name, ln, m))?;
            for atom in pred.clauses.iter().flatten() {
                let ok = match atom {
                    Atom::Mem { loc, .. } => known(loc),
                    Atom::Reg {
                        owner: RegOwner::Thread(t),
                        reg,
                        ..
                    } => programs.get(*t).is_some_and(|p| {
                        p.stmts
                            .iter()
                            .any(|s| matches!(s, crate::program::Stmt::Load { reg: Some(r), .. } if r == reg))
                    }),
                    Atom::Reg {
                        owner: RegOwner::Interloper,
                        reg,
                        ..
                    } => interloper.is_some() && *reg == 0,
                };
                if !ok {
                    return Err(err(&name, ln, format!("`{}` names an undeclared register or location", atom.key())));
                }
            }
            conditions.push(Condition {
                expect,
                configs,
                pred,
                text,
            });
        }
        let extra = interloper.is_some() as u16;
        config.cores = config.cores.max(programs.len() as u16 + extra);
        Ok(LitmusTest {
            name,
            config,
            locs: resolved,
            init,
            threads: programs,
            interloper,
            skew,
            conditions,
        })
    }

    pub fn addr_of(&self, loc: &str) -> Option<PhysAddr> {
        self.locs.iter().find(|(n, _)| n == loc).map(|&(_, a)| a)
    }

    pub fn symbols(&self) -> Symbols {
        let mut s = Symbols::default();
        for (n, a) in &self.locs {
            s.insert(n, a.0);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Model;

    const MP: &str = "litmus MP
loc X = 0x1000
loc A = S1:0x40
init X = 0; A = 0
option network.jitter_max = 16
P0:
  st X 1
  st A 1
P1:
  ld A r0
  ld X r1
forbidden 1:r0=1 /\\ 1:r1=0
required [atomic, sw-flush] (1:r0=0 /\\ 1:r1=0) \\/ X=7
";

    #[test]
    fn parses_locations_threads_and_conditions() {
        let t = LitmusTest::parse(MP).unwrap();
        assert_eq!(t.name, "MP");
        assert_eq!(t.threads.len(), 2);
        assert_eq!(t.addr_of("A"), Some(PhysAddr(0x4000_0000 + 2 * 1024 * 1024 + 0x40)));
        assert_eq!(t.config.network.jitter_max, 16);
        assert_eq!(t.conditions[0].expect, Expectation::Forbidden);
        assert!(t.conditions[0].applies_to(Configuration::of(Model::Scope)));
        let c = &t.conditions[1];
        assert!(c.applies_to(Configuration::of(Model::SwFlush)));
        assert!(!c.applies_to(Configuration::of(Model::Scope)));
        assert_eq!(c.pred.clauses.len(), 2);
    }

    #[test]
    fn predicates_evaluate_over_valuations() {
        let p = Predicate::parse("0:r0=1 /\\ X=2").unwrap();
        let mut v = BTreeMap::from([("0:r0".to_string(), 1), ("X".to_string(), 2)]);
        assert!(p.holds(&v));
        v.insert("X".into(), 3);
        assert!(!p.holds(&v));
    }

    #[test]
    fn rejects_undeclared_names() {
        let bad = MP.replace("1:r1=0", "1:r7=0");
        assert!(LitmusTest::parse(&bad).unwrap_err().msg.contains("1:r7"));
        let bad = MP.replace("st A 1", "st Q 1");
        assert_eq!(LitmusTest::parse(&bad).unwrap_err().line, 8);
        let bad = MP.replace("option network.jitter_max", "option network.nope");
        assert!(LitmusTest::parse(&bad).is_err());
    }

    #[test]
    fn statements_outside_threads_are_errors() {
        assert!(LitmusTest::parse("litmus x\nst X 1\n").is_err());
    }
}
