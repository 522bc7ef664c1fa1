//! Memory controller with a bounded request queue, and the PIM module it
//! feeds.

use std::collections::{HashMap, VecDeque};

use super::{blocks, Ev, Msg, System};
use crate::engine::{ComponentId, SimTime};
use crate::types::ScopeId;

#[derive(Debug, Default)]
pub(crate) struct MemCtrl {
    inbound: VecDeque<Msg>,
    queue: Vec<Msg>,
    /// Accepted PIM ops not yet finished, per scope.
    pim_outstanding: HashMap<ScopeId, u32>,
    tick_scheduled: bool,
    next_tick: u64,
}

impl MemCtrl {
    pub fn new() -> Self {
        MemCtrl::default()
    }

    pub fn idle(&self) -> bool {
        self.inbound.is_empty() && self.queue.is_empty() && self.pim_outstanding.is_empty()
    }
}

impl System {
    pub(super) fn mc_receive(&mut self, msg: Msg) {
        self.mc.inbound.push_back(msg);
        self.mc_accept();
        self.mc_kick();
    }

    fn mc_accept(&mut self) {
        let now = self.now();
        while self.mc.queue.len() < self.cfg.mc_queue_depth {
            let Some(msg) = self.mc.inbound.pop_front() else {
                return;
            };
            if let Msg::PimOp { core, seq, .. } = msg {
                if self.model.acks_pim() {
                    self.send(now, ComponentId::MemCtrl, ComponentId::Core(core), Msg::PimAck { seq });
                }
            }
            self.mc.queue.push(msg);
            self.metrics.mc_queue.push((now, self.mc.queue.len() as u32));
        }
    }

    fn mc_kick(&mut self) {
        if self.mc.tick_scheduled || self.mc.queue.is_empty() {
            return;
        }
        self.mc.tick_scheduled = true;
        let at = self.now().max(self.mc.next_tick);
        self.engine.schedule(SimTime(at), ComponentId::MemCtrl, Ev::McTick);
    }

    fn mc_eligible(&self, i: usize) -> bool {
        let msg = &self.mc.queue[i];
        let key = msg.key(&self.map);
        if self.mc.queue[..i].iter().any(|o| blocks(o.key(&self.map), key)) {
            return false;
        }
        match *msg {
            Msg::PimOp { .. } => self.pim.has_space(),
            Msg::PimFence { .. } => i == 0,
            _ => match key {
                super::network::DepKey::Line { scope: Some(s), .. } => !self.mc.pim_outstanding.contains_key(&s),
                _ => true,
            },
        }
    }

    pub(super) fn mc_tick(&mut self) {
        self.mc.tick_scheduled = false;
        let eligible: Vec<usize> = (0..self.mc.queue.len()).filter(|&i| self.mc_eligible(i)).take(2).collect();
        if eligible.is_empty() {
            return;
        }
        let pick = if eligible.len() > 1 {
            eligible[self.chooser.pick("mc", eligible.len() as u32) as usize]
        } else {
            eligible[0]
        };
        let msg = self.mc.queue.remove(pick);
        let now = self.now();
        self.mc.next_tick = now + 1;
        self.mc_issue(msg);
        self.mc_accept();
        self.mc_kick();
    }

    fn mc_issue(&mut self, msg: Msg) {
        let now = self.now();
        let dram = self.cfg.dram_latency;
        match msg {
            Msg::MemRead { line } => {
                self.metrics.dram_reads += 1;
                let data = self.mem.read_line(line);
                self.send(now + dram, ComponentId::MemCtrl, ComponentId::Llc, Msg::MemData { line, data });
            }
            Msg::MemWrite { line, data, scan, ack } => {
                self.metrics.dram_writes += 1;
                if scan {
                    self.metrics.mc_scan_writebacks += 1;
                }
                self.mem.write_line(line, data);
                if let Some(c) = ack {
                    self.send(now + dram, ComponentId::MemCtrl, ComponentId::Core(c), Msg::FlushAck { line });
                }
            }
            Msg::InvNotice { line, scan, ack } => {
                if scan {
                    self.metrics.mc_scan_invalidations += 1;
                }
                if let Some(c) = ack {
                    self.send(now, ComponentId::MemCtrl, ComponentId::Core(c), Msg::FlushAck { line });
                }
            }
            Msg::UcLoad { addr, core } => {
                self.metrics.dram_reads += 1;
                let val = self.mem.read_word(addr);
                self.send(now + dram, ComponentId::MemCtrl, ComponentId::Llc, Msg::UcLoadResp { core, val });
            }
            Msg::UcStore { addr, val, core } => {
                self.metrics.dram_writes += 1;
                self.mem.write_word(addr, val);
                self.send(now + dram, ComponentId::MemCtrl, ComponentId::Llc, Msg::UcStoreAck { core });
            }
            Msg::PimOp { op, .. } => {
                *self.mc.pim_outstanding.entry(op.scope).or_insert(0) += 1;
                let s = self.pim.enqueue(op);
                self.metrics.pim_occupancy.push((now, s.occupancy as u32));
                self.metrics.pim_unique_scopes.push((now, s.unique_scopes as u32));
                self.pim_start(op.scope);
            }
            Msg::PimFence { core } => {
                self.send(now, ComponentId::MemCtrl, ComponentId::Core(core), Msg::FenceAck);
            }
            other => panic!("memory controller cannot issue {other:?}"),
        }
    }

    fn pim_start(&mut self, scope: ScopeId) {
        if self.pim.is_busy(scope) {
            return;
        }
        let now = self.now();
        let Some(&next) = self.pim.peek(scope) else {
            return;
        };
        let lat = self.cfg.pim.latency.of(next.opcode);
        let op = self.pim.start(scope, now, lat).expect("idle scope with a waiting op");
        if !self.model.is_baseline() && !self.uncacheable {
            let cached: u32 = self.llc.array.resident_in_scope(scope)
                + self.l1s.iter().map(|l| l.array.resident_in_scope(scope)).sum::<u32>();
            if cached != 0 {
                self.violation(format!(
                    "atomic flush: {} of {scope} starts with {cached} cached lines",
                    op.opcode.mnemonic()
                ));
            }
        }
        self.mem.apply_pim(&self.map, &op);
        self.pim_log.push(op);
        self.metrics.pim_ops_executed += 1;
        self.metrics.pim_busy_max = self.metrics.pim_busy_max.max(self.pim.busy_scopes() as u64);
        self.engine.schedule(SimTime(now + lat), ComponentId::Pim, Ev::PimDone(scope));
    }

    pub(super) fn pim_done(&mut self, scope: ScopeId) {
        self.pim.complete(scope);
        let n = self.mc.pim_outstanding.get_mut(&scope).expect("outstanding PIM op");
        *n -= 1;
        if *n == 0 {
            self.mc.pim_outstanding.remove(&scope);
        }
        self.pim_start(scope);
        self.mc_kick();
    }
}
