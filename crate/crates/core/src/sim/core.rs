//! Commit-point cores with a TSO write buffer. Each consistency model's PIM
//! issue protocol is enacted here.

use std::collections::{BTreeMap, VecDeque};

use super::{Ev, Msg, System};
use crate::config::Model;
use crate::engine::{ComponentId, SimTime};
use crate::program::Stmt;
use crate::types::{LineAddr, MemRequest, PhysAddr, PimOpDescriptor, RequestKind, RequestPayload, ScopeId, Target, TraceRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Wait {
    None,
    Load,
    PimAck(u32),
    FenceAck,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum WbKind {
    Store { addr: PhysAddr, val: u64 },
    Pim(PimOpDescriptor),
    Flush(LineAddr),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum WbState {
    Pending,
    Issued,
    AwaitingAck,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct WbEntry {
    pub stmt: usize,
    pub kind: WbKind,
    pub state: WbState,
}

#[derive(Debug)]
pub(crate) struct Core {
    pub program: Vec<Stmt>,
    pub pc: usize,
    pub started: bool,
    pub step_scheduled: bool,
    pub wait: Wait,
    pub wb: VecDeque<WbEntry>,
    pub loads: Vec<Option<u64>>,
    pub regs: BTreeMap<u8, u64>,
    pub done_at: Option<u64>,
}

impl Core {
    pub fn new(program: Vec<Stmt>) -> Self {
        let n = program.len();
        Core {
            program,
            pc: 0,
            started: false,
            step_scheduled: false,
            wait: Wait::None,
            wb: VecDeque::new(),
            loads: vec![None; n],
            regs: BTreeMap::new(),
            done_at: None,
        }
    }
}

enum Commit {
    /// Statement retired; continue after this many cycles.
    Next(u64),
    Blocked,
    Finished,
}

impl System {
    fn scope_of_entry(&self, k: &WbKind) -> Option<ScopeId> {
        match *k {
            WbKind::Store { addr, .. } => self.map.scope_of(addr),
            WbKind::Pim(op) => Some(op.scope),
            WbKind::Flush(line) => self.map.scope_of_line(line),
        }
    }

    fn is_uncached(&self, addr: PhysAddr) -> bool {
        self.uncacheable && self.map.is_pim(addr)
    }

    pub(super) fn kick_core(&mut self, c: usize) {
        let core = &mut self.cores[c];
        if core.started && !core.step_scheduled && core.done_at.is_none() {
            core.step_scheduled = true;
            let now = self.engine.now();
            self.engine.schedule(now, ComponentId::Core(c as u16), Ev::CoreStep);
        }
    }

    pub(super) fn core_step(&mut self, c: usize) {
        self.cores[c].step_scheduled = false;
        if self.cores[c].wait != Wait::None || self.cores[c].done_at.is_some() {
            return;
        }
        loop {
            match self.try_commit(c) {
                Commit::Next(0) => continue,
                Commit::Next(d) => {
                    self.cores[c].step_scheduled = true;
                    let at = self.engine.now().after(d);
                    self.engine.schedule(at, ComponentId::Core(c as u16), Ev::CoreStep);
                    return;
                }
                Commit::Blocked | Commit::Finished => return,
            }
        }
    }

    fn advance(&mut self, c: usize) {
        self.cores[c].pc += 1;
        self.check_trigger(c);
    }

    fn request(&self, c: usize, kind: RequestKind, target: Target, payload: RequestPayload) -> MemRequest {
        let pim_enabled = match target {
            Target::Addr(a) => self.map.is_pim(a),
            Target::Scope(_) => true,
            Target::None => false,
        };
        MemRequest {
            kind,
            target,
            thread: c as u16,
            core: c as u16,
            program_seq: self.cores[c].pc as u32,
            pim_enabled,
            payload,
        }
    }

    fn trace_issue(&mut self, c: usize, kind: RequestKind, target: Target, payload: RequestPayload) {
        if self.trace.is_some() {
            let req = self.request(c, kind, target, payload);
            let t = self.now();
            self.record_trace(|| TraceRecord::from_request(t, &req));
        }
    }

    fn try_commit(&mut self, c: usize) -> Commit {
        let pc = self.cores[c].pc;
        let Some(&stmt) = self.cores[c].program.get(pc) else {
            if self.cores[c].wb.is_empty() {
                self.cores[c].done_at = Some(self.now());
                return Commit::Finished;
            }
            return Commit::Blocked;
        };
        let model = self.model;
        let wb_full = self.cores[c].wb.len() >= self.cfg.write_buffer_depth;
        match stmt {
            Stmt::Phase => {
                self.advance(c);
                Commit::Next(0)
            }
            Stmt::Delay(n) => {
                self.advance(c);
                Commit::Next(n.max(1))
            }
            Stmt::Load { addr, .. } => {
                let scope = self.map.scope_of(addr);
                let held = matches!(model, Model::Store | Model::Scope)
                    && scope.is_some()
                    && self.cores[c]
                        .wb
                        .iter()
                        .any(|e| matches!(e.kind, WbKind::Pim(op) if Some(op.scope) == scope));
                if held {
                    return Commit::Blocked;
                }
                let fwd = self.cores[c].wb.iter().rev().find_map(|e| match e.kind {
                    WbKind::Store { addr: a, val } if a == addr => Some(val),
                    _ => None,
                });
                self.trace_issue(c, RequestKind::Load, Target::Addr(addr), RequestPayload::None);
                if let Some(v) = fwd {
                    self.retire_load(c, v);
                    return Commit::Next(1);
                }
                self.cores[c].wait = Wait::Load;
                if self.is_uncached(addr) {
                    let depart = self.now() + self.cfg.l1_latency;
                    self.send(depart, ComponentId::L1(c as u16), ComponentId::Llc, Msg::UcLoad { addr, core: c as u16 });
                } else {
                    self.l1_load(c, addr);
                }
                Commit::Blocked
            }
            Stmt::Store { addr, val } => {
                if wb_full {
                    return Commit::Blocked;
                }
                self.push_wb(c, WbKind::Store { addr, val });
                self.trace_issue(c, RequestKind::Store, Target::Addr(addr), RequestPayload::Word(val));
                self.advance(c);
                self.wb_pump(c);
                Commit::Next(1)
            }
            Stmt::Flush(addr) => {
                if wb_full {
                    return Commit::Blocked;
                }
                self.push_wb(c, WbKind::Flush(addr.line()));
                self.trace_issue(c, RequestKind::LineFlush, Target::Addr(addr), RequestPayload::None);
                self.advance(c);
                self.wb_pump(c);
                Commit::Next(1)
            }
            Stmt::Pim(op) => match model {
                Model::Atomic => {
                    if !self.cores[c].wb.is_empty() {
                        return Commit::Blocked;
                    }
                    self.issue_pim(c, pc, op);
                    self.cores[c].wait = Wait::PimAck(pc as u32);
                    Commit::Blocked
                }
                Model::Store | Model::Scope => {
                    if wb_full {
                        return Commit::Blocked;
                    }
                    self.push_wb(c, WbKind::Pim(op));
                    self.advance(c);
                    self.wb_pump(c);
                    Commit::Next(1)
                }
                Model::ScopeRelaxed | Model::Naive | Model::SwFlush => {
                    self.issue_pim(c, pc, op);
                    self.advance(c);
                    Commit::Next(1)
                }
            },
            Stmt::MemFence => {
                if !self.cores[c].wb.is_empty() {
                    return Commit::Blocked;
                }
                self.advance(c);
                Commit::Next(1)
            }
            Stmt::PimFence => {
                let wb = &self.cores[c].wb;
                match model {
                    Model::Atomic => {
                        if !wb.is_empty() {
                            return Commit::Blocked;
                        }
                    }
                    Model::Store | Model::Scope => {
                        let pim_pending = wb.iter().any(|e| matches!(e.kind, WbKind::Pim(_)));
                        if pim_pending || (self.cfg.pimfence_orders_all && !wb.is_empty()) {
                            return Commit::Blocked;
                        }
                    }
                    Model::ScopeRelaxed | Model::Naive | Model::SwFlush => {
                        if !wb.is_empty() {
                            return Commit::Blocked;
                        }
                        self.trace_issue(c, RequestKind::PimFence, Target::None, RequestPayload::None);
                        let msg = Msg::PimFence { core: c as u16 };
                        let now = self.now();
                        if model == Model::ScopeRelaxed {
                            self.send(now + self.cfg.l1_latency, ComponentId::L1(c as u16), ComponentId::Llc, msg);
                        } else {
                            self.send(now, ComponentId::Core(c as u16), ComponentId::MemCtrl, msg);
                        }
                        self.cores[c].wait = Wait::FenceAck;
                        return Commit::Blocked;
                    }
                }
                self.advance(c);
                Commit::Next(1)
            }
            Stmt::ScopeFence(scope) => {
                if model == Model::ScopeRelaxed {
                    let pending = self.cores[c]
                        .wb
                        .iter()
                        .any(|e| self.scope_of_entry(&e.kind) == Some(scope));
                    if pending {
                        return Commit::Blocked;
                    }
                    self.trace_issue(c, RequestKind::ScopeFence, Target::Scope(scope), RequestPayload::None);
                    self.l1_scope_fence(c, scope);
                }
                self.advance(c);
                Commit::Next(1)
            }
        }
    }

    fn push_wb(&mut self, c: usize, kind: WbKind) {
        let stmt = self.cores[c].pc;
        self.cores[c].wb.push_back(WbEntry {
            stmt,
            kind,
            state: WbState::Pending,
        });
    }

    fn retire_load(&mut self, c: usize, value: u64) {
        let core = &mut self.cores[c];
        let pc = core.pc;
        core.loads[pc] = Some(value);
        if let Stmt::Load { reg: Some(r), .. } = core.program[pc] {
            core.regs.insert(r, value);
        }
        self.advance(c);
    }

    pub(super) fn core_load_done(&mut self, c: usize, value: u64) {
        assert_eq!(self.cores[c].wait, Wait::Load, "core {c}: load completion without a load");
        self.cores[c].wait = Wait::None;
        self.retire_load(c, value);
        self.kick_core(c);
    }

    pub(super) fn core_store_done(&mut self, c: usize, stmt: usize) {
        let wb = &mut self.cores[c].wb;
        let pos = wb
            .iter()
            .position(|e| e.stmt == stmt && e.state == WbState::Issued)
            .unwrap_or_else(|| panic!("core {c}: completion for unknown write-buffer entry {stmt}"));
        wb.remove(pos);
        self.wb_pump(c);
        self.kick_core(c);
    }

    /// Sends a PIM op on the model's route: through the L1 to the LLC, or
    /// straight to the controller for the baselines.
    fn issue_pim(&mut self, c: usize, stmt: usize, op: PimOpDescriptor) {
        let seq = stmt as u32;
        if self.trace.is_some() {
            let mut req = self.request(c, RequestKind::PimOp, Target::Scope(op.scope), RequestPayload::Pim(op));
            req.program_seq = seq;
            let t = self.now();
            self.record_trace(|| TraceRecord::from_request(t, &req));
        }
        let msg = Msg::PimOp { op, core: c as u16, seq };
        let now = self.now();
        if self.model.is_baseline() {
            self.send(now, ComponentId::Core(c as u16), ComponentId::MemCtrl, msg);
        } else {
            self.send(now + self.cfg.l1_latency, ComponentId::L1(c as u16), ComponentId::Llc, msg);
        }
    }

    /// Issues every write-buffer entry the model lets leave now.
    pub(super) fn wb_pump(&mut self, c: usize) {
        let mut issue = Vec::new();
        {
            let wb = &self.cores[c].wb;
            if self.model == Model::Scope {
                for (i, e) in wb.iter().enumerate() {
                    if e.state != WbState::Pending {
                        continue;
                    }
                    let scope = self.scope_of_entry(&e.kind);
                    let earlier = wb.iter().take(i);
                    let ok = match e.kind {
                        WbKind::Pim(op) => !earlier.clone().any(|o| self.scope_of_entry(&o.kind) == Some(op.scope)),
                        _ => {
                            let first_plain = !earlier.clone().any(|o| !matches!(o.kind, WbKind::Pim(_)));
                            let no_pim = scope.is_none()
                                || !earlier.clone().any(|o| matches!(o.kind, WbKind::Pim(op) if Some(op.scope) == scope));
                            first_plain && no_pim
                        }
                    };
                    if ok {
                        issue.push(i);
                    }
                }
            } else {
                for (i, e) in wb.iter().enumerate() {
                    let only_flushes_before = wb
                        .iter()
                        .take(i)
                        .all(|o| matches!(o.kind, WbKind::Flush(_)) && o.state != WbState::Pending);
                    if !only_flushes_before {
                        break;
                    }
                    if e.state == WbState::Pending && (i == 0 || matches!(e.kind, WbKind::Flush(_))) {
                        issue.push(i);
                    }
                    if !matches!(e.kind, WbKind::Flush(_)) {
                        break;
                    }
                }
            }
        }
        for i in issue {
            let e = self.cores[c].wb[i];
            match e.kind {
                WbKind::Store { addr, val } => {
                    self.cores[c].wb[i].state = WbState::Issued;
                    if self.is_uncached(addr) {
                        let depart = self.now() + self.cfg.l1_latency;
                        self.cores[c].wb[i].state = WbState::AwaitingAck;
                        self.send(
                            depart,
                            ComponentId::L1(c as u16),
                            ComponentId::Llc,
                            Msg::UcStore {
                                addr,
                                val,
                                core: c as u16,
                            },
                        );
                    } else {
                        self.l1_store(c, addr, val, e.stmt);
                    }
                }
                WbKind::Pim(op) => {
                    self.cores[c].wb[i].state = WbState::AwaitingAck;
                    self.issue_pim(c, e.stmt, op);
                }
                WbKind::Flush(line) => {
                    self.cores[c].wb[i].state = WbState::AwaitingAck;
                    let depart = self.now() + self.cfg.l1_latency;
                    self.send(depart, ComponentId::L1(c as u16), ComponentId::Llc, Msg::Flush { line, core: c as u16 });
                }
            }
        }
    }

    fn retire_awaiting(&mut self, c: usize, pred: impl Fn(&WbEntry) -> bool, what: &str) {
        let wb = &mut self.cores[c].wb;
        let pos = wb
            .iter()
            .position(|e| e.state == WbState::AwaitingAck && pred(e))
            .unwrap_or_else(|| panic!("core {c}: {what} with no matching pending entry"));
        wb.remove(pos);
        self.wb_pump(c);
        self.kick_core(c);
    }

    pub(super) fn core_receive(&mut self, c: usize, msg: Msg) {
        match msg {
            Msg::PimAck { seq } => {
                if self.trace.is_some() {
                    let mut req = self.request(c, RequestKind::PimAck, Target::None, RequestPayload::None);
                    req.program_seq = seq;
                    let t = self.now();
                    self.record_trace(|| TraceRecord::from_request(t, &req));
                }
                if self.cores[c].wait == Wait::PimAck(seq) {
                    self.cores[c].wait = Wait::None;
                    self.advance(c);
                    self.kick_core(c);
                } else {
                    self.retire_awaiting(c, |e| e.stmt as u32 == seq && matches!(e.kind, WbKind::Pim(_)), "PIM ack");
                }
            }
            Msg::FenceAck => {
                assert_eq!(self.cores[c].wait, Wait::FenceAck, "core {c}: unexpected fence ack");
                self.cores[c].wait = Wait::None;
                self.advance(c);
                self.kick_core(c);
            }
            Msg::FlushAck { line } => self.retire_awaiting(c, |e| e.kind == WbKind::Flush(line), "flush ack"),
            Msg::UcStoreAck { .. } => {
                self.retire_awaiting(c, |e| matches!(e.kind, WbKind::Store { .. }), "uncached store ack")
            }
            other => panic!("core {c} received {other:?}"),
        }
    }

    pub(super) fn schedule_core(&mut self, c: usize, at: u64, ev: Ev) {
        self.engine.schedule(SimTime(at), ComponentId::Core(c as u16), ev);
    }
}
