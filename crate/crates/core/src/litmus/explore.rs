//! Outcome exploration: seeded random trials or a bounded walk of the whole
//! choice tree, plus per-condition verdicts.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Expectation, LitmusTest};
use crate::config::Configuration;
use crate::engine::{derive_seed, Chooser};
use crate::exec::Exec;
use crate::sim::{InterloperSpec, Job, RunOutcome, SimError, System};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExploreMode {
    Random { trials: u64, seed: u64 },
    /// Walks every branch of the first `depth_bound` choice points, stopping
    /// early (and reporting partial) after `max_runs` simulations.
    Exhaustive { depth_bound: usize, max_runs: u64 },
}

impl fmt::Display for ExploreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExploreMode::Random { trials, seed } => write!(f, "random({trials} trials, seed {seed})"),
            ExploreMode::Exhaustive { depth_bound, .. } => write!(f, "exhaustive(depth {depth_bound})"),
        }
    }
}

/// How to reproduce one execution exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Repro {
    Seed(u64),
    Path(Vec<u32>),
}

impl Repro {
    pub fn chooser(&self) -> Chooser {
        match self {
            Repro::Seed(s) => Chooser::random(*s),
            Repro::Path(p) => Chooser::path(p.clone(), usize::MAX),
        }
    }
}

impl fmt::Display for Repro {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Repro::Seed(s) => write!(f, "seed {s}"),
            Repro::Path(p) => {
                let s: Vec<String> = p.iter().map(u32::to_string).collect();
                write!(f, "path [{}]", s.join(","))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub valuation: BTreeMap<String, u64>,
    pub count: u64,
    /// The first execution that produced this outcome.
    pub repro: Repro,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeSet {
    pub test: String,
    pub configuration: Configuration,
    pub mode: ExploreMode,
    pub runs: u64,
    /// Exhaustive walk cut short by the depth bound or the run cap.
    pub partial: bool,
    pub outcomes: BTreeMap<String, Observation>,
    pub violations: Vec<(String, Repro)>,
    pub errors: Vec<(String, Repro)>,
}

impl OutcomeSet {
    fn new(test: &str, configuration: Configuration, mode: ExploreMode) -> Self {
        OutcomeSet {
            test: test.to_string(),
            configuration,
            mode,
            runs: 0,
            partial: false,
            outcomes: BTreeMap::new(),
            violations: Vec::new(),
            errors: Vec::new(),
        }
    }

    fn record(&mut self, result: Result<BTreeMap<String, u64>, (Vec<String>, String)>, repro: Repro) {
        self.runs += 1;
        match result {
            Ok(valuation) => {
                let key = render(&valuation);
                self.outcomes
                    .entry(key)
                    .and_modify(|o| o.count += 1)
                    .or_insert(Observation {
                        valuation,
                        count: 1,
                        repro,
                    });
            }
            Err((violations, error)) => {
                if !error.is_empty() && self.errors.len() < 10 {
                    self.errors.push((error, repro.clone()));
                }
                for v in violations {
                    if self.violations.len() < 10 {
                        self.violations.push((v, repro.clone()));
                    }
                }
            }
        }
    }

    pub fn observed(&self, pred: &super::Predicate) -> Option<&Observation> {
        self.outcomes.values().find(|o| pred.holds(&o.valuation))
    }
}

fn render(v: &BTreeMap<String, u64>) -> String {
    let parts: Vec<String> = v
        .iter()
        .map(|(k, x)| if *x > 0xffff { format!("{k}={x:#x}") } else { format!("{k}={x}") })
        .collect();
    parts.join(" ")
}

/// Simulates the test once.
pub(crate) fn run_once(test: &LitmusTest, c: Configuration, chooser: Chooser) -> Result<RunOutcome, SimError> {
    let mut cfg = test.config.clone();
    cfg.set_configuration(c);
    let job = Job {
        programs: test.threads.clone(),
        init: test
            .init
            .iter()
            .map(|(n, v)| (test.addr_of(n).expect("validated location"), *v))
            .collect(),
        init_memory: None,
        interloper: test.interloper.as_ref().map(|(loc, t)| InterloperSpec {
            addr: test.addr_of(loc).expect("validated location"),
            after: *t,
        }),
        start_skew: test.skew,
    };
    System::new(cfg, job, chooser)?.run()
}

fn valuation(test: &LitmusTest, out: &RunOutcome) -> BTreeMap<String, u64> {
    let mut v = BTreeMap::new();
    for (t, regs) in out.registers.iter().enumerate() {
        let owner = if t < test.threads.len() { t.to_string() } else { "I".to_string() };
        for (r, x) in regs {
            v.insert(format!("{owner}:r{r}"), *x);
        }
    }
    for (n, a) in &test.locs {
        v.insert(n.clone(), out.memory.read_word(*a));
    }
    v
}

type RunResult = Result<BTreeMap<String, u64>, (Vec<String>, String)>;

fn classify(test: &LitmusTest, r: &Result<RunOutcome, SimError>) -> RunResult {
    match r {
        Ok(out) if out.violations.is_empty() => Ok(valuation(test, out)),
        Ok(out) => Err((out.violations.clone(), String::new())),
        Err(e) => Err((Vec::new(), e.to_string())),
    }
}

pub fn explore(test: &LitmusTest, c: Configuration, mode: ExploreMode, exec: Exec) -> OutcomeSet {
    let mut set = OutcomeSet::new(&test.name, c, mode);
    match mode {
        ExploreMode::Random { trials, seed } => {
            let seeds: Vec<u64> = (0..trials).map(|i| derive_seed(seed, &format!("trial:{i}"))).collect();
            let results = exec.map(&seeds, |&s| classify(test, &run_once(test, c, Chooser::random(s))));
            for (s, r) in seeds.into_iter().zip(results) {
                set.record(r, Repro::Seed(s));
            }
        }
        ExploreMode::Exhaustive { depth_bound, max_runs } => {
            let mut frontier: Vec<Vec<u32>> = vec![Vec::new()];
            while !frontier.is_empty() {
                let room = max_runs.saturating_sub(set.runs) as usize;
                if room == 0 {
                    set.partial = true;
                    break;
                }
                if frontier.len() > room {
                    frontier.truncate(room);
                    set.partial = true;
                }
                let results = exec.map(&frontier, |prefix| {
                    let out = run_once(test, c, Chooser::path(prefix.clone(), depth_bound));
                    let children = match &out {
                        Ok(o) => {
                            let mut kids = Vec::new();
                            let path: Vec<u32> = o.decisions.iter().map(|d| d.choice).collect();
                            for i in prefix.len()..o.decisions.len().min(depth_bound) {
                                for alt in o.decisions[i].choice + 1..o.decisions[i].arity {
                                    let mut k = path[..i].to_vec();
                                    k.push(alt);
                                    kids.push(k);
                                }
                            }
                            kids
                        }
                        Err(_) => Vec::new(),
                    };
                    let truncated = out.as_ref().is_ok_and(|o| o.truncated);
                    let path = out.as_ref().map(|o| o.path.clone()).unwrap_or_else(|_| prefix.clone());
                    (classify(test, &out), children, truncated, path)
                });
                let mut next = Vec::new();
                for (r, kids, truncated, path) in results {
                    set.partial |= truncated;
                    set.record(r, Repro::Path(path));
                    next.extend(kids);
                }
                frontier = next;
            }
        }
    }
    set
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    Warning,
    Info,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Warning => "WARN",
            Status::Info => "info",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionVerdict {
    pub condition: String,
    pub expect: Expectation,
    pub status: Status,
    pub observed: bool,
    pub witness: Option<Repro>,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub test: String,
    pub configuration: Configuration,
    pub mode: ExploreMode,
    pub runs: u64,
    pub partial: bool,
    pub conditions: Vec<ConditionVerdict>,
    pub violations: Vec<(String, Repro)>,
    pub errors: Vec<(String, Repro)>,
    pub pass: bool,
}

pub fn verdict(set: &OutcomeSet, test: &LitmusTest) -> Verdict {
    let exhaustive = matches!(set.mode, ExploreMode::Exhaustive { .. });
    let mut conditions = Vec::new();
    for c in test.conditions.iter().filter(|c| c.applies_to(set.configuration)) {
        let hit = set.observed(&c.pred);
        let witness = hit.map(|o| o.repro.clone());
        let (status, note) = match (c.expect, hit.is_some()) {
            (Expectation::Allowed, _) => (Status::Info, String::new()),
            (Expectation::Forbidden, true) => (Status::Fail, "forbidden outcome observed".into()),
            (Expectation::Forbidden, false) if set.partial => (Status::Pass, "absent within the explored bound".into()),
            (Expectation::Forbidden, false) => (Status::Pass, String::new()),
            (Expectation::Required, _) if !exhaustive => {
                (Status::Warning, "required outcomes need exhaustive exploration".into())
            }
            (Expectation::Required, true) => (Status::Pass, String::new()),
            (Expectation::Required, false) if set.partial => {
                (Status::Warning, "not observed; exploration was partial".into())
            }
            (Expectation::Required, false) => (Status::Fail, "required outcome never observed".into()),
        };
        conditions.push(ConditionVerdict {
            condition: c.text.clone(),
            expect: c.expect,
            status,
            observed: hit.is_some(),
            witness,
            note,
        });
    }
    let pass = set.violations.is_empty()
        && set.errors.is_empty()
        && conditions.iter().all(|c| c.status != Status::Fail);
    Verdict {
        test: set.test.clone(),
        configuration: set.configuration,
        mode: set.mode,
        runs: set.runs,
        partial: set.partial,
        conditions,
        violations: set.violations.clone(),
        errors: set.errors.clone(),
        pass,
    }
}

/// One line per condition, grouped by test and configuration.
pub fn verdict_table(verdicts: &[Verdict]) -> String {
    let mut out = format!("{:<28} {:<14} {:>7}  {:<5} {}\n", "test", "configuration", "runs", "", "condition");
    for v in verdicts {
        let head = format!(
            "{:<28} {:<14} {:>7}{}",
            v.test,
            v.configuration.label(),
            v.runs,
            if v.partial { "*" } else { " " }
        );
        if v.conditions.is_empty() {
            out.push_str(&format!("{head} {:<5} (no conditions)\n", if v.pass { "PASS" } else { "FAIL" }));
        }
        for c in &v.conditions {
            let witness = c.witness.as_ref().map(|w| format!(" [{w}]")).unwrap_or_default();
            let note = if c.note.is_empty() { String::new() } else { format!(" ({})", c.note) };
            out.push_str(&format!("{head} {:<5} {:?} {}{note}{witness}\n", c.status.to_string(), c.expect, c.condition));
        }
        for (msg, repro) in v.violations.iter().chain(&v.errors) {
            out.push_str(&format!("{head} FAIL  {msg} [{repro}]\n"));
        }
    }
    let failed = verdicts.iter().filter(|v| !v.pass).count();
    out.push_str(&format!(
        "{} verdicts, {failed} failing{}\n",
        verdicts.len(),
        if verdicts.iter().any(|v| v.partial) { "; * partial exploration" } else { "" }
    ));
    out
}
