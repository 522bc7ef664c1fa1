//! Private L1 controllers: MESI hits and misses, MSHR merging, and scope
//! fence scans under the scope-relaxed model.

use std::collections::VecDeque;

use super::{Ev, Msg, System};
use crate::cache::{CacheArray, CacheLine, Mesi, ScopeBuffer};
use crate::config::SimConfig;
use crate::engine::{ComponentId, SimTime};
use crate::types::{LineAddr, PhysAddr, ScopeId};

#[derive(Clone, Copy, Debug)]
enum Access {
    Load(PhysAddr),
    Store { addr: PhysAddr, val: u64, stmt: usize },
    ScopeFence(ScopeId),
}

#[derive(Debug)]
struct Mshr {
    line: LineAddr,
    waiters: Vec<Access>,
}

#[derive(Debug)]
pub(crate) struct L1 {
    pub array: CacheArray,
    mshrs: Vec<Mshr>,
    blocked_until: u64,
    deferred: VecDeque<Access>,
    retry_scheduled: bool,
}

impl L1 {
    pub fn new(cfg: &SimConfig, scope_buffer: bool) -> Self {
        let sb = scope_buffer.then(|| ScopeBuffer::new(cfg.l1_scope_buffer.sets, cfg.l1_scope_buffer.ways));
        L1 {
            array: CacheArray::new(cfg.l1.sets(), cfg.l1.ways, sb),
            mshrs: Vec::new(),
            blocked_until: 0,
            deferred: VecDeque::new(),
            retry_scheduled: false,
        }
    }
}

impl System {
    pub(super) fn l1_load(&mut self, c: usize, addr: PhysAddr) {
        self.l1_access(c, Access::Load(addr));
    }

    pub(super) fn l1_store(&mut self, c: usize, addr: PhysAddr, val: u64, stmt: usize) {
        self.l1_access(c, Access::Store { addr, val, stmt });
    }

    pub(super) fn l1_scope_fence(&mut self, c: usize, scope: ScopeId) {
        self.l1_access(c, Access::ScopeFence(scope));
    }

    fn l1_access(&mut self, c: usize, a: Access) {
        let now = self.now();
        let l1 = &mut self.l1s[c];
        if l1.blocked_until > now || !l1.deferred.is_empty() {
            l1.deferred.push_back(a);
            self.l1_schedule_retry(c);
            return;
        }
        self.l1_perform(c, a);
    }

    fn l1_schedule_retry(&mut self, c: usize) {
        let l1 = &mut self.l1s[c];
        if !l1.retry_scheduled {
            l1.retry_scheduled = true;
            let at = l1.blocked_until.max(self.engine.now().0);
            self.engine.schedule(SimTime(at), ComponentId::L1(c as u16), Ev::L1Retry);
        }
    }

    pub(super) fn l1_retry(&mut self, c: usize) {
        self.l1s[c].retry_scheduled = false;
        while self.l1s[c].blocked_until <= self.now() {
            let Some(a) = self.l1s[c].deferred.pop_front() else {
                return;
            };
            self.l1_perform(c, a);
        }
        if !self.l1s[c].deferred.is_empty() {
            self.l1_schedule_retry(c);
        }
    }

    fn l1_perform(&mut self, c: usize, a: Access) {
        let now = self.now();
        let lat = self.cfg.l1_latency;
        match a {
            Access::Load(addr) => {
                let line = addr.line();
                if let Some(l) = self.l1s[c].array.get(line) {
                    let value = l.data[addr.word()];
                    self.l1s[c].array.touch(line);
                    self.metrics.l1_hits += 1;
                    self.schedule_core(c, now + lat, Ev::LoadDone { value });
                } else {
                    self.l1_miss(c, line, a, false);
                }
            }
            Access::Store { addr, val, stmt } => {
                let line = addr.line();
                let writable = self.l1s[c]
                    .array
                    .get(line)
                    .is_some_and(|l| matches!(l.state, Mesi::M | Mesi::E));
                if writable {
                    let l = self.l1s[c].array.get_mut(line).expect("present");
                    l.data[addr.word()] = val;
                    l.state = Mesi::M;
                    self.l1s[c].array.touch(line);
                    self.metrics.l1_hits += 1;
                    self.schedule_core(c, now + lat, Ev::StoreDone { stmt });
                } else {
                    self.l1_miss(c, line, a, true);
                }
            }
            Access::ScopeFence(scope) => {
                let hit = self.l1s[c]
                    .array
                    .scope_buffer_mut()
                    .expect("scope fences reach L1s only under scope-relaxed")
                    .lookup(scope);
                let mut depart = now + lat;
                if hit {
                    self.metrics.l1_scope_buffer_hits += 1;
                } else {
                    self.metrics.l1_scope_buffer_misses += 1;
                    let plan = self.l1s[c].array.plan_scan(scope);
                    for &line in &plan.lines {
                        self.l1_evict(c, line);
                    }
                    let s = self.cfg.scan;
                    let cost = plan.latency(s.per_set, s.per_line, s.fixed);
                    self.l1s[c]
                        .array
                        .scope_buffer_mut()
                        .expect("scope buffer")
                        .insert(scope);
                    self.l1s[c].blocked_until = now + cost;
                    depart = now + cost;
                }
                self.send(depart, ComponentId::L1(c as u16), ComponentId::Llc, Msg::ScopeFence { scope });
            }
        }
    }

    fn l1_miss(&mut self, c: usize, line: LineAddr, a: Access, want_m: bool) {
        self.metrics.l1_misses += 1;
        if let Some(m) = self.l1s[c].mshrs.iter_mut().find(|m| m.line == line) {
            m.waiters.push(a);
            return;
        }
        self.l1s[c].mshrs.push(Mshr {
            line,
            waiters: vec![a],
        });
        let msg = if want_m {
            Msg::GetM { line, core: c as u16 }
        } else {
            Msg::GetS { line, core: c as u16 }
        };
        let depart = self.now() + self.cfg.l1_latency;
        self.send(depart, ComponentId::L1(c as u16), ComponentId::Llc, msg);
    }

    /// Drops a line from an L1, writing modified data into the LLC copy and
    /// updating the directory.
    pub(super) fn l1_evict(&mut self, c: usize, line: LineAddr) {
        let Some(old) = self.l1s[c].array.remove(line) else {
            return;
        };
        let ll = self
            .llc
            .array
            .get_mut(line)
            .unwrap_or_else(|| panic!("inclusivity broken: L1[{c}] evicts {:#x} missing from LLC", line.0));
        if old.state == Mesi::M {
            ll.data = old.data;
            ll.dirty = true;
        }
        ll.sharers &= !(1u64 << c);
        if ll.owner == Some(c as u16) {
            ll.owner = None;
        }
    }

    pub(super) fn l1_receive(&mut self, c: usize, msg: Msg) {
        match msg {
            Msg::Data { line, data, state } => {
                let pos = self.l1s[c]
                    .mshrs
                    .iter()
                    .position(|m| m.line == line)
                    .unwrap_or_else(|| panic!("L1[{c}]: data for {:#x} without a miss", line.0));
                let mshr = self.l1s[c].mshrs.remove(pos);
                if let Some(l) = self.l1s[c].array.get_mut(line) {
                    l.data = data;
                    l.state = state;
                } else {
                    if self.l1s[c].array.set_full(line) {
                        let victim = self.l1s[c].array.pick_victim(line, |_| false).expect("full set");
                        self.l1_evict(c, victim);
                    }
                    let scope = self.map.scope_of_line(line);
                    self.l1s[c].array.install(CacheLine::new(line, state, data, scope));
                }
                self.l1s[c].array.touch(line);
                let now = self.now();
                for a in mshr.waiters {
                    match a {
                        Access::Load(addr) => {
                            let value = self.l1s[c].array.get(line).expect("filled").data[addr.word()];
                            self.schedule_core(c, now, Ev::LoadDone { value });
                        }
                        Access::Store { addr, val, stmt } => {
                            let l = self.l1s[c].array.get_mut(line).expect("filled");
                            if matches!(l.state, Mesi::M | Mesi::E) {
                                l.data[addr.word()] = val;
                                l.state = Mesi::M;
                                self.schedule_core(c, now, Ev::StoreDone { stmt });
                            } else {
                                self.l1_miss(c, line, a, true);
                            }
                        }
                        Access::ScopeFence(_) => unreachable!("fences never wait on a miss"),
                    }
                }
            }
            Msg::UcLoadResp { val, .. } => {
                let now = self.now();
                self.schedule_core(c, now, Ev::LoadDone { value: val });
            }
            Msg::UcStoreAck { core } => {
                let now = self.now();
                self.engine
                    .schedule(SimTime(now), ComponentId::Core(c as u16), Ev::Deliver(Msg::UcStoreAck { core }));
            }
            other => panic!("L1[{c}] received {other:?}"),
        }
    }
}
