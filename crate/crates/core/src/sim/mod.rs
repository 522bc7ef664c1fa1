//! The assembled machine: cores, L1s, LLC, memory controller and PIM module
//! running on one event engine.

mod core;
mod l1;
mod llc;
mod mc;
pub mod network;
pub mod pim;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::cache::Mesi;
use crate::config::{ConfigError, Model, SimConfig};
use crate::engine::{Chooser, ComponentId, Decision, Engine, EngineError, SimTime};
use crate::memory::Memory;
use crate::program::{Stmt, ThreadProgram};
use crate::stats::RunMetrics;
use crate::types::{AddressMap, LineAddr, LineData, PhysAddr, PimOpDescriptor, ScopeId, TraceRecord};

use self::core::Core;
use self::l1::L1;
use self::llc::Llc;
use self::mc::MemCtrl;
use self::network::{DepKey, Network};
use self::pim::PimBuffer;

/// Messages carried by network links.
#[derive(Clone, Debug)]
pub(crate) enum Msg {
    GetS { line: LineAddr, core: u16 },
    GetM { line: LineAddr, core: u16 },
    Data { line: LineAddr, data: LineData, state: Mesi },
    UcLoad { addr: PhysAddr, core: u16 },
    UcStore { addr: PhysAddr, val: u64, core: u16 },
    UcLoadResp { core: u16, val: u64 },
    UcStoreAck { core: u16 },
    Flush { line: LineAddr, core: u16 },
    FlushAck { line: LineAddr },
    PimOp { op: PimOpDescriptor, core: u16, seq: u32 },
    PimAck { seq: u32 },
    ScopeFence { scope: ScopeId },
    PimFence { core: u16 },
    FenceAck,
    MemRead { line: LineAddr },
    MemWrite { line: LineAddr, data: LineData, scan: bool, ack: Option<u16> },
    InvNotice { line: LineAddr, scan: bool, ack: Option<u16> },
    MemData { line: LineAddr, data: LineData },
}

impl Msg {
    pub(crate) fn key(&self, map: &AddressMap) -> DepKey {
        let line_key = |line: LineAddr| DepKey::Line {
            line,
            scope: map.scope_of_line(line),
        };
        match *self {
            Msg::GetS { line, .. }
            | Msg::GetM { line, .. }
            | Msg::Data { line, .. }
            | Msg::Flush { line, .. }
            | Msg::MemRead { line }
            | Msg::MemWrite { line, .. }
            | Msg::InvNotice { line, .. }
            | Msg::MemData { line, .. } => line_key(line),
            Msg::UcLoad { addr, .. } | Msg::UcStore { addr, .. } => line_key(addr.line()),
            Msg::PimOp { op, .. } => DepKey::Scope(op.scope),
            Msg::ScopeFence { scope } => DepKey::Scope(scope),
            Msg::PimFence { .. } => DepKey::Global,
            Msg::UcLoadResp { core, .. } | Msg::UcStoreAck { core } => DepKey::Line {
                line: LineAddr(u64::MAX - core as u64),
                scope: None,
            },
            Msg::FlushAck { .. } | Msg::PimAck { .. } | Msg::FenceAck => DepKey::Line {
                line: LineAddr(u64::MAX),
                scope: None,
            },
        }
    }
}

/// True when `younger` may not be handled before `older` in an ordered queue.
pub(crate) fn blocks(older: DepKey, younger: DepKey) -> bool {
    match (older, younger) {
        (_, DepKey::Global) => true,
        (DepKey::Global, _) => false,
        (DepKey::Line { line: a, .. }, DepKey::Line { line: b, .. }) => a == b,
        (DepKey::Scope(s), DepKey::Line { scope, .. }) | (DepKey::Line { scope, .. }, DepKey::Scope(s)) => {
            scope == Some(s)
        }
        (DepKey::Scope(a), DepKey::Scope(b)) => a == b,
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Ev {
    Deliver(Msg),
    CoreStep,
    LoadDone { value: u64 },
    StoreDone { stmt: usize },
    L1Retry,
    LlcTick,
    LlcUnbusy(LineAddr),
    McTick,
    PimDone(ScopeId),
}

/// An extra core that loads `addr` once thread `after`'s program counter
/// reaches a nondeterministically chosen position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InterloperSpec {
    pub addr: PhysAddr,
    pub after: usize,
}

/// Everything a run executes: programs, initial memory and litmus extras.
#[derive(Clone, Debug, Default)]
pub struct Job {
    pub programs: Vec<ThreadProgram>,
    pub init: Vec<(PhysAddr, u64)>,
    pub init_memory: Option<Memory>,
    pub interloper: Option<InterloperSpec>,
    /// Each thread starts at 0 or at this many cycles, a choice point.
    pub start_skew: u64,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0} threads plus agents need more than the configured {1} cores")]
    TooFewCores(usize, u16),
    #[error(transparent)]
    Livelock(#[from] EngineError),
    #[error("deadlock at {at}: {detail}")]
    Deadlock { at: SimTime, detail: String },
    #[error("statement {stmt} of thread {thread}: {msg}")]
    Program { thread: usize, stmt: usize, msg: String },
}

/// Result of one complete simulation.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub end_time: u64,
    /// Value returned by every load, indexed by thread then statement.
    pub loads: Vec<Vec<Option<u64>>>,
    pub registers: Vec<BTreeMap<u8, u64>>,
    /// Memory with every dirty cached line written back.
    pub memory: Memory,
    pub metrics: RunMetrics,
    pub violations: Vec<String>,
    pub trace_digest: u64,
    pub path: Vec<u32>,
    pub decisions: Vec<Decision>,
    pub truncated: bool,
    pub trace: Vec<TraceRecord>,
    /// `(scope, op)` in the order ops started executing at the PIM module.
    pub pim_log: Vec<PimOpDescriptor>,
}

pub struct System {
    cfg: SimConfig,
    map: AddressMap,
    model: Model,
    uncacheable: bool,
    engine: Engine<Ev>,
    chooser: Chooser,
    net: Network,
    cores: Vec<Core>,
    l1s: Vec<L1>,
    llc: Llc,
    mc: MemCtrl,
    pim: PimBuffer,
    mem: Memory,
    metrics: RunMetrics,
    violations: Vec<String>,
    n_threads: usize,
    interloper: Option<(usize, InterloperSpec, usize)>,
    trace: Option<Vec<TraceRecord>>,
    pim_log: Vec<PimOpDescriptor>,
}

impl System {
    pub fn new(cfg: SimConfig, job: Job, mut chooser: Chooser) -> Result<Self, SimError> {
        cfg.validate()?;
        let map = cfg.address_map().map_err(ConfigError::from)?;
        let n_threads = job.programs.len();
        let needed = n_threads + job.interloper.is_some() as usize;
        if needed > cfg.cores as usize {
            return Err(SimError::TooFewCores(needed, cfg.cores));
        }
        for (t, p) in job.programs.iter().enumerate() {
            for (i, s) in p.stmts.iter().enumerate() {
                let err = |msg: String| SimError::Program {
                    thread: t,
                    stmt: i,
                    msg,
                };
                match *s {
                    Stmt::Load { addr, .. } | Stmt::Store { addr, .. } | Stmt::Flush(addr) if addr.0 % 8 != 0 => {
                        return Err(err(format!("address {addr} is not 8-byte aligned")))
                    }
                    Stmt::Pim(op) if op.scope.0 >= map.n_scopes => return Err(err(format!("no scope {}", op.scope))),
                    Stmt::ScopeFence(s) if s.0 >= map.n_scopes => return Err(err(format!("no scope {s}"))),
                    _ => {}
                }
            }
        }
        let mut mem = job.init_memory.unwrap_or_default();
        for &(a, v) in &job.init {
            mem.write_word(a, v);
        }
        let cores_used = needed as u16;
        let models_sb = !cfg.model.is_baseline();
        let l1_sb = cfg.model == Model::ScopeRelaxed;
        let l1s = (0..cores_used).map(|_| L1::new(&cfg, l1_sb)).collect();
        let mut cores: Vec<Core> = job
            .programs
            .iter()
            .map(|p| Core::new(p.stmts.clone()))
            .collect();
        let interloper = job.interloper.map(|spec| {
            let limit = job.programs.get(spec.after).map_or(0, |p| p.stmts.len());
            let trigger = chooser.pick("interloper", limit as u32 + 1) as usize;
            cores.push(Core::new(vec![Stmt::Load {
                addr: spec.addr,
                reg: Some(0),
            }]));
            (cores.len() - 1, spec, trigger)
        });
        let mut sys = System {
            engine: Engine::new(cfg.watchdog_events),
            net: Network::new(cfg.network.base_latency, cfg.network.jitter_max),
            llc: Llc::new(&cfg, models_sb),
            mc: MemCtrl::new(),
            pim: PimBuffer::new(cfg.pim.buffer_capacity),
            model: cfg.model,
            uncacheable: cfg.uncacheable,
            map,
            cores,
            l1s,
            mem,
            metrics: RunMetrics::default(),
            violations: Vec::new(),
            n_threads,
            interloper,
            trace: None,
            pim_log: Vec::new(),
            chooser,
            cfg,
        };
        for t in 0..n_threads {
            let start = if job.start_skew > 0 {
                sys.chooser.pick(&format!("skew:{t}"), 2) as u64 * job.start_skew
            } else {
                0
            };
            sys.cores[t].started = true;
            sys.engine.schedule(SimTime(start), ComponentId::Core(t as u16), Ev::CoreStep);
            sys.cores[t].step_scheduled = true;
        }
        sys.check_trigger(0);
        Ok(sys)
    }

    /// Records every request a core issues.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub(crate) fn now(&self) -> u64 {
        self.engine.now().0
    }

    /// Sends `msg` over the `from -> to` link, departing at `depart`.
    pub(crate) fn send(&mut self, depart: u64, from: ComponentId, to: ComponentId, msg: Msg) -> u64 {
        let key = msg.key(&self.map);
        let branching = matches!(
            (from, to),
            (ComponentId::L1(_), ComponentId::Llc) | (ComponentId::Core(_), ComponentId::MemCtrl)
        );
        let at = self.net.send(depart, from, to, key, branching, &mut self.chooser);
        self.engine.schedule(SimTime(at), to, Ev::Deliver(msg));
        at
    }

    fn dispatch(&mut self, target: ComponentId, ev: Ev) {
        match (target, ev) {
            (ComponentId::Core(c), Ev::CoreStep) => self.core_step(c as usize),
            (ComponentId::Core(c), Ev::LoadDone { value }) => self.core_load_done(c as usize, value),
            (ComponentId::Core(c), Ev::StoreDone { stmt }) => self.core_store_done(c as usize, stmt),
            (ComponentId::Core(c), Ev::Deliver(msg)) => self.core_receive(c as usize, msg),
            (ComponentId::L1(c), Ev::Deliver(msg)) => self.l1_receive(c as usize, msg),
            (ComponentId::L1(c), Ev::L1Retry) => self.l1_retry(c as usize),
            (ComponentId::Llc, Ev::Deliver(msg)) => self.llc_receive(msg),
            (ComponentId::Llc, Ev::LlcTick) => self.llc_tick(),
            (ComponentId::Llc, Ev::LlcUnbusy(line)) => self.llc_unbusy(line),
            (ComponentId::MemCtrl, Ev::Deliver(msg)) => self.mc_receive(msg),
            (ComponentId::MemCtrl, Ev::McTick) => self.mc_tick(),
            (ComponentId::Pim, Ev::PimDone(s)) => self.pim_done(s),
            (t, e) => panic!("event {e:?} delivered to {t:?}"),
        }
    }

    pub fn run(mut self) -> Result<RunOutcome, SimError> {
        self.drive()?;
        Ok(self.finish())
    }

    /// Dispatches every event, then checks that nothing is left stuck.
    fn drive(&mut self) -> Result<(), SimError> {
        let interval = self.cfg.invariant_interval;
        let watchdog = self.cfg.watchdog_events;
        let mut since_check = 0u64;
        while let Some(ev) = self.engine.pop_until(SimTime(u64::MAX)) {
            self.dispatch(ev.target, ev.payload);
            since_check += 1;
            if interval > 0 && since_check >= interval {
                since_check = 0;
                self.check_invariants();
            }
            if self.engine.dispatched() >= watchdog {
                return Err(EngineError::Livelock {
                    events: self.engine.dispatched(),
                    cap: watchdog,
                    at: self.engine.now(),
                }
                .into());
            }
        }
        self.check_invariants();
        if let Some(detail) = self.stuck_component() {
            return Err(SimError::Deadlock {
                at: self.engine.now(),
                detail,
            });
        }
        Ok(())
    }

    fn stuck_component(&self) -> Option<String> {
        for (i, c) in self.cores.iter().enumerate() {
            let is_interloper = self.interloper.is_some_and(|(ic, _, _)| ic == i);
            if c.done_at.is_none() && (c.started || !is_interloper) {
                return Some(format!("core {i} stopped at statement {} ({:?})", c.pc, c.wait));
            }
        }
        if !self.llc.idle() {
            return Some("LLC has undelivered work".into());
        }
        if !self.mc.idle() || self.pim.resident() > 0 {
            return Some("memory controller or PIM module has undelivered work".into());
        }
        None
    }

    fn finish(mut self) -> RunOutcome {
        let mut memory = self.mem.clone();
        for l in self.llc.array.lines() {
            if l.dirty {
                memory.write_line(l.line, l.data);
            }
        }
        for l1 in &self.l1s {
            for l in l1.array.lines() {
                if l.state == Mesi::M {
                    memory.write_line(l.line, l.data);
                }
            }
        }
        let end = self.engine.now().0;
        self.metrics.total_cycles = self.cores[..self.n_threads]
            .iter()
            .map(|c| c.done_at.unwrap_or(end))
            .max()
            .unwrap_or(0);
        self.metrics.thread_cycles = self.cores[..self.n_threads]
            .iter()
            .map(|c| c.done_at.unwrap_or(end))
            .collect();
        self.metrics.events = self.engine.dispatched();
        let n = self.n_threads;
        RunOutcome {
            end_time: end,
            loads: self.cores[..n].iter().map(|c| c.loads.clone()).collect(),
            registers: self.cores.iter().map(|c| c.regs.clone()).collect(),
            memory,
            metrics: self.metrics,
            violations: self.violations,
            trace_digest: self.engine.trace_digest(),
            path: self.chooser.path_taken(),
            decisions: self.chooser.decisions().to_vec(),
            truncated: self.chooser.truncated(),
            trace: self.trace.unwrap_or_default(),
            pim_log: self.pim_log,
        }
    }

    fn violation(&mut self, msg: String) {
        if self.violations.len() < 100 {
            self.violations.push(format!("t={}: {msg}", self.now()));
        }
    }

    /// Full recomputation of every structural invariant.
    pub(crate) fn check_invariants(&mut self) {
        let mut errs = self.llc.array.check("LLC");
        for (i, l1) in self.l1s.iter().enumerate() {
            errs.extend(l1.array.check(&format!("L1[{i}]")));
        }
        let mut holders: BTreeMap<LineAddr, Vec<(usize, Mesi)>> = BTreeMap::new();
        for (i, l1) in self.l1s.iter().enumerate() {
            for l in l1.array.lines() {
                holders.entry(l.line).or_default().push((i, l.state));
                match self.llc.array.get(l.line) {
                    None => errs.push(format!("inclusivity: L1[{i}] holds {:#x} absent from the LLC", l.line.0)),
                    Some(ll) if ll.sharers >> i & 1 == 0 => {
                        errs.push(format!("directory: L1[{i}] holds {:#x} but is not a sharer", l.line.0))
                    }
                    _ => {}
                }
            }
        }
        for (line, hs) in holders {
            let writers = hs.iter().filter(|(_, s)| matches!(s, Mesi::M | Mesi::E)).count();
            if writers > 1 || (writers == 1 && hs.len() > 1) {
                errs.push(format!("single-writer: line {:#x} held as {hs:?}", line.0));
            }
        }
        for e in errs {
            self.violation(e);
        }
    }

    fn check_trigger(&mut self, thread: usize) {
        let Some((core, spec, trigger)) = self.interloper else {
            return;
        };
        if spec.after == thread && !self.cores[core].started && self.cores[thread].pc >= trigger {
            self.cores[core].started = true;
            self.kick_core(core);
        }
    }

    fn record_trace(&mut self, rec: impl FnOnce() -> TraceRecord) {
        if let Some(t) = self.trace.as_mut() {
            t.push(rec());
        }
    }
}
