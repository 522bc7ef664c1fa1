//! Shared inclusive LLC: blocking MESI directory, scope buffer lookups and
//! scope scan-and-flush for PIM ops and scope fences.

use std::collections::{HashMap, HashSet, VecDeque};

use super::{blocks, Ev, Msg, System};
use crate::cache::{CacheArray, CacheLine, Mesi, ScopeBuffer};
use crate::config::SimConfig;
use crate::engine::{ComponentId, SimTime};
use crate::types::{LineAddr, LineData, ScopeId};

#[derive(Debug)]
pub(crate) struct Llc {
    pub array: CacheArray,
    pending: VecDeque<Msg>,
    busy: HashSet<LineAddr>,
    busy_scope: HashMap<ScopeId, u32>,
    /// Requests waiting for memory, by line.
    fills: HashMap<LineAddr, Msg>,
    stalled_fills: Vec<(LineAddr, LineData)>,
    blocked_until: u64,
    tick_scheduled: bool,
    next_tick: u64,
}

impl Llc {
    pub fn new(cfg: &SimConfig, scope_buffer: bool) -> Self {
        let sb = scope_buffer.then(|| ScopeBuffer::new(cfg.llc_scope_buffer.sets, cfg.llc_scope_buffer.ways));
        Llc {
            array: CacheArray::new(cfg.llc.sets(), cfg.llc.ways, sb),
            pending: VecDeque::new(),
            busy: HashSet::new(),
            busy_scope: HashMap::new(),
            fills: HashMap::new(),
            stalled_fills: Vec::new(),
            blocked_until: 0,
            tick_scheduled: false,
            next_tick: 0,
        }
    }

    pub fn idle(&self) -> bool {
        self.pending.is_empty() && self.busy.is_empty() && self.fills.is_empty() && self.stalled_fills.is_empty()
    }
}

impl System {
    fn llc_set_busy(&mut self, line: LineAddr) {
        if self.llc.busy.insert(line) {
            if let Some(s) = self.map.scope_of_line(line) {
                *self.llc.busy_scope.entry(s).or_insert(0) += 1;
            }
        }
    }

    pub(super) fn llc_unbusy(&mut self, line: LineAddr) {
        if self.llc.busy.remove(&line) {
            if let Some(s) = self.map.scope_of_line(line) {
                let n = self.llc.busy_scope.get_mut(&s).expect("busy count");
                *n -= 1;
                if *n == 0 {
                    self.llc.busy_scope.remove(&s);
                }
            }
        }
        for (line, data) in std::mem::take(&mut self.llc.stalled_fills) {
            self.llc_fill(line, data);
        }
        self.llc_kick();
    }

    fn llc_kick(&mut self) {
        if self.llc.tick_scheduled || self.llc.pending.is_empty() {
            return;
        }
        self.llc.tick_scheduled = true;
        let at = self.now().max(self.llc.next_tick).max(self.llc.blocked_until);
        self.engine.schedule(SimTime(at), ComponentId::Llc, Ev::LlcTick);
    }

    pub(super) fn llc_receive(&mut self, msg: Msg) {
        let now = self.now();
        let lat = self.cfg.llc_latency;
        match msg {
            Msg::MemData { line, data } => self.llc_fill(line, data),
            Msg::UcLoadResp { core, .. } | Msg::UcStoreAck { core } => {
                self.send(now + lat, ComponentId::Llc, ComponentId::L1(core), msg);
            }
            _ => {
                self.llc.pending.push_back(msg);
                self.llc_kick();
            }
        }
    }

    fn llc_eligible(&self, i: usize) -> bool {
        let msg = &self.llc.pending[i];
        let key = msg.key(&self.map);
        if self.llc.pending.iter().take(i).any(|o| blocks(o.key(&self.map), key)) {
            return false;
        }
        match *msg {
            Msg::PimOp { op, .. } => !self.llc.busy_scope.contains_key(&op.scope),
            Msg::ScopeFence { scope } => !self.llc.busy_scope.contains_key(&scope),
            Msg::PimFence { .. } => true,
            Msg::UcLoad { addr, .. } | Msg::UcStore { addr, .. } => !self.llc.busy.contains(&addr.line()),
            Msg::GetS { line, .. } | Msg::GetM { line, .. } | Msg::Flush { line, .. } => !self.llc.busy.contains(&line),
            ref other => panic!("LLC queue holds {other:?}"),
        }
    }

    pub(super) fn llc_tick(&mut self) {
        self.llc.tick_scheduled = false;
        let now = self.now();
        if now < self.llc.blocked_until {
            self.llc_kick();
            return;
        }
        let Some(i) = (0..self.llc.pending.len()).find(|&i| self.llc_eligible(i)) else {
            return;
        };
        let msg = self.llc.pending.remove(i).expect("index in range");
        self.llc.next_tick = now + 1;
        self.llc_process(msg);
        self.llc_kick();
    }

    fn llc_process(&mut self, msg: Msg) {
        let now = self.now();
        let lat = self.cfg.llc_latency;
        match msg {
            Msg::GetS { line, core } | Msg::GetM { line, core } => {
                let want_m = matches!(msg, Msg::GetM { .. });
                if self.llc.array.get(line).is_some() {
                    self.metrics.llc_hits += 1;
                    self.llc_grant(line, core, want_m);
                } else {
                    self.metrics.llc_misses += 1;
                    self.llc_set_busy(line);
                    self.llc.fills.insert(line, msg);
                    self.send(now + lat, ComponentId::Llc, ComponentId::MemCtrl, Msg::MemRead { line });
                }
            }
            Msg::Flush { line, core } => {
                let out = match self.llc_drop(line) {
                    Some(l) if l.dirty => Msg::MemWrite {
                        line,
                        data: l.data,
                        scan: false,
                        ack: Some(core),
                    },
                    _ => Msg::InvNotice {
                        line,
                        scan: false,
                        ack: Some(core),
                    },
                };
                self.send(now + lat, ComponentId::Llc, ComponentId::MemCtrl, out);
            }
            Msg::UcLoad { .. } | Msg::UcStore { .. } | Msg::PimFence { .. } => {
                self.send(now + lat, ComponentId::Llc, ComponentId::MemCtrl, msg);
            }
            Msg::PimOp { op, .. } => {
                self.metrics.pim_ops_at_llc += 1;
                let cost = self.llc_scope_scan(op.scope);
                self.metrics.scan_latency.push((now, cost));
                self.send(now + cost + lat, ComponentId::Llc, ComponentId::MemCtrl, msg);
            }
            Msg::ScopeFence { scope } => {
                self.llc_scope_scan(scope);
            }
            other => panic!("LLC cannot process {other:?}"),
        }
    }

    /// Answers a request for a resident line, probing L1 copies as needed.
    fn llc_grant(&mut self, line: LineAddr, core: u16, want_m: bool) {
        let c = core as usize;
        let ll = self.llc.array.get(line).expect("granted line is resident");
        let (owner, sharers) = (ll.owner, ll.sharers);
        if want_m {
            for s in 0..self.l1s.len() {
                if s != c && sharers >> s & 1 == 1 {
                    self.l1_evict(s, line);
                }
            }
        } else if let Some(o) = owner.filter(|&o| o != core) {
            let o = o as usize;
            let l1 = self.l1s[o].array.get_mut(line).expect("owner holds the line");
            let (state, data) = (l1.state, l1.data);
            l1.state = Mesi::S;
            let ll = self.llc.array.get_mut(line).expect("resident");
            if state == Mesi::M {
                ll.data = data;
                ll.dirty = true;
            }
            ll.owner = None;
        }
        self.llc.array.touch(line);
        let ll = self.llc.array.get_mut(line).expect("resident");
        let state = if want_m {
            ll.sharers = 1 << c;
            ll.owner = Some(core);
            Mesi::M
        } else if ll.sharers & !(1u64 << c) == 0 {
            ll.sharers = 1 << c;
            ll.owner = Some(core);
            Mesi::E
        } else {
            ll.sharers |= 1 << c;
            Mesi::S
        };
        let data = ll.data;
        self.llc_set_busy(line);
        let now = self.now();
        let at = self.send(
            now + self.cfg.llc_latency,
            ComponentId::Llc,
            ComponentId::L1(core),
            Msg::Data { line, data, state },
        );
        self.engine.schedule(SimTime(at), ComponentId::Llc, Ev::LlcUnbusy(line));
    }

    fn llc_fill(&mut self, line: LineAddr, data: LineData) {
        if self.llc.array.set_full(line) {
            let busy = &self.llc.busy;
            let Some(victim) = self.llc.array.pick_victim(line, |l| busy.contains(&l)) else {
                self.llc.stalled_fills.push((line, data));
                return;
            };
            if let Some(v) = self.llc_drop(victim) {
                if v.dirty {
                    let now = self.now();
                    self.send(
                        now,
                        ComponentId::Llc,
                        ComponentId::MemCtrl,
                        Msg::MemWrite {
                            line: victim,
                            data: v.data,
                            scan: false,
                            ack: None,
                        },
                    );
                }
            }
        }
        let scope = self.map.scope_of_line(line);
        self.llc.array.install(CacheLine::new(line, Mesi::S, data, scope));
        let req = self.llc.fills.remove(&line).expect("fill without a request");
        match req {
            Msg::GetS { core, .. } => self.llc_grant(line, core, false),
            Msg::GetM { core, .. } => self.llc_grant(line, core, true),
            other => panic!("fill for {other:?}"),
        }
    }

    /// Invalidates a line in every L1 and the LLC, returning the LLC copy
    /// with any modified L1 data merged in.
    fn llc_drop(&mut self, line: LineAddr) -> Option<CacheLine> {
        let sharers = self.llc.array.get(line)?.sharers;
        for s in 0..self.l1s.len() {
            if sharers >> s & 1 == 1 {
                self.l1_evict(s, line);
            }
        }
        self.llc.array.remove(line)
    }

    /// Scope-buffer lookup, then scan-and-flush on a miss. Returns the scan
    /// latency (0 on a hit) and blocks the LLC for that long.
    fn llc_scope_scan(&mut self, scope: ScopeId) -> u64 {
        let hit = self
            .llc
            .array
            .scope_buffer_mut()
            .expect("LLC scope buffer exists for the consistency models")
            .lookup(scope);
        if hit {
            self.metrics.llc_scope_buffer_hits += 1;
            return 0;
        }
        self.metrics.llc_scope_buffer_misses += 1;
        let now = self.now();
        let plan = self.llc.array.plan_scan(scope);
        let s = self.cfg.scan;
        let cost = plan.latency(s.per_set, s.per_line, s.fixed);
        let mut cursor = now + s.fixed;
        for &line in &plan.lines {
            cursor += s.per_line;
            let l = self.llc_drop(line).expect("planned line is resident");
            let msg = if l.dirty {
                Msg::MemWrite {
                    line,
                    data: l.data,
                    scan: true,
                    ack: None,
                }
            } else {
                Msg::InvNotice {
                    line,
                    scan: true,
                    ack: None,
                }
            };
            self.metrics.scan_lines_flushed += 1;
            self.send(cursor, ComponentId::Llc, ComponentId::MemCtrl, msg);
        }
        self.llc
            .array
            .scope_buffer_mut()
            .expect("scope buffer")
            .insert(scope);
        let total = self.llc.array.n_sets();
        self.metrics.sbv_skips.push((now, total - plan.sets_visited, total));
        self.llc.blocked_until = now + cost;
        cost
    }
}
