//! Point-to-point links with random delay and per-dependence-key FIFO.

use std::collections::HashMap;

use crate::engine::{Chooser, ComponentId};
use crate::types::{LineAddr, ScopeId};

/// What a message must stay ordered with on its link.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DepKey {
    /// A line message; `scope` is set for lines of PIM memory.
    Line { line: LineAddr, scope: Option<ScopeId> },
    /// A PIM op or scope fence: ordered with everything in its scope.
    Scope(ScopeId),
    /// Ordered with every message on the link.
    Global,
}

#[derive(Debug)]
struct Link {
    label: String,
    last_line: HashMap<LineAddr, u64>,
    last_scope_any: HashMap<ScopeId, u64>,
    last_scope_pim: HashMap<ScopeId, u64>,
    last_any: u64,
    last_global: u64,
}

impl Link {
    fn new(from: ComponentId, to: ComponentId) -> Self {
        Link {
            label: format!("net:{from:?}->{to:?}"),
            last_line: HashMap::new(),
            last_scope_any: HashMap::new(),
            last_scope_pim: HashMap::new(),
            last_any: 0,
            last_global: 0,
        }
    }

    /// Earliest delivery no earlier than `t` that keeps every message this
    /// one depends on ahead of it. Equal times keep send order through the
    /// engine's tie sequence.
    fn order(&mut self, mut t: u64, key: DepKey) -> u64 {
        t = t.max(self.last_global);
        match key {
            DepKey::Line { line, scope } => {
                t = t.max(self.last_line.get(&line).copied().unwrap_or(0));
                if let Some(s) = scope {
                    t = t.max(self.last_scope_pim.get(&s).copied().unwrap_or(0));
                    let e = self.last_scope_any.entry(s).or_insert(0);
                    *e = (*e).max(t);
                }
                self.last_line.insert(line, t);
            }
            DepKey::Scope(s) => {
                t = t.max(self.last_scope_any.get(&s).copied().unwrap_or(0));
                self.last_scope_any.insert(s, t);
                self.last_scope_pim.insert(s, t);
            }
            DepKey::Global => {
                t = t.max(self.last_any);
                self.last_global = t;
            }
        }
        self.last_any = self.last_any.max(t);
        t
    }
}

#[derive(Debug)]
pub struct Network {
    base: u64,
    jitter_max: u64,
    links: HashMap<(ComponentId, ComponentId), Link>,
}

impl Network {
    pub fn new(base: u64, jitter_max: u64) -> Self {
        Network {
            base,
            jitter_max,
            links: HashMap::new(),
        }
    }

    /// Delivery time of a message sent at `now`. `branching` marks hops whose
    /// jitter is an enumerable choice in exhaustive exploration.
    pub fn send(
        &mut self,
        now: u64,
        from: ComponentId,
        to: ComponentId,
        key: DepKey,
        branching: bool,
        chooser: &mut Chooser,
    ) -> u64 {
        let link = self.links.entry((from, to)).or_insert_with(|| Link::new(from, to));
        let jitter = chooser.jitter(&link.label, self.jitter_max, branching);
        link.order(now + self.base + jitter, key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(l: u64) -> DepKey {
        DepKey::Line {
            line: LineAddr(l),
            scope: None,
        }
    }

    fn pim_line(l: u64, s: u32) -> DepKey {
        DepKey::Line {
            line: LineAddr(l),
            scope: Some(ScopeId(s)),
        }
    }

    fn link() -> Link {
        Link::new(ComponentId::L1(0), ComponentId::Llc)
    }

    #[test]
    fn independent_lines_may_overtake() {
        let mut l = link();
        assert_eq!(l.order(100, line(1)), 100);
        assert_eq!(l.order(20, line(2)), 20);
    }

    #[test]
    fn same_line_keeps_send_order() {
        let mut l = link();
        assert_eq!(l.order(100, line(1)), 100);
        assert_eq!(l.order(20, line(1)), 100);
    }

    #[test]
    fn scope_fence_stays_behind_same_scope_load() {
        let mut l = link();
        assert_eq!(l.order(90, pim_line(4, 3)), 90);
        assert_eq!(l.order(10, DepKey::Scope(ScopeId(3))), 90);
        // A later load of the scope stays behind the fence; other scopes do not.
        assert_eq!(l.order(5, pim_line(8, 3)), 90);
        assert_eq!(l.order(5, pim_line(9, 2)), 5);
    }

    #[test]
    fn global_orders_everything() {
        let mut l = link();
        l.order(70, line(1));
        l.order(50, DepKey::Scope(ScopeId(0)));
        assert_eq!(l.order(10, DepKey::Global), 70);
        assert_eq!(l.order(10, line(2)), 70);
    }

    #[test]
    fn jitter_stays_in_range() {
        let mut net = Network::new(8, 8);
        let mut ch = Chooser::random(3);
        for i in 0..1000 {
            let t = net.send(0, ComponentId::Core(0), ComponentId::MemCtrl, line(i), true, &mut ch);
            assert!((8..=16).contains(&t));
        }
    }
}
