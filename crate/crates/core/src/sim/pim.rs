//! PIM op buffer: bounded total residency, FIFO per scope, one executing op
//! per scope and any number of scopes in parallel.

use std::collections::{BTreeMap, VecDeque};

use crate::types::{PimOpDescriptor, ScopeId};

#[derive(Clone, Debug)]
struct ScopeQueue {
    waiting: VecDeque<PimOpDescriptor>,
    busy_until: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct PimBuffer {
    capacity: Option<usize>,
    scopes: BTreeMap<ScopeId, ScopeQueue>,
    resident: usize,
}

/// Buffer statistics taken when an op arrives, counting the arriving op.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArrivalSample {
    pub occupancy: usize,
    pub unique_scopes: usize,
}

impl PimBuffer {
    pub fn new(capacity: Option<usize>) -> Self {
        PimBuffer {
            capacity,
            scopes: BTreeMap::new(),
            resident: 0,
        }
    }

    /// Waiting plus executing ops.
    pub fn resident(&self) -> usize {
        self.resident
    }

    pub fn has_space(&self) -> bool {
        self.capacity.is_none_or(|c| self.resident < c)
    }

    pub fn enqueue(&mut self, op: PimOpDescriptor) -> ArrivalSample {
        assert!(self.has_space(), "PIM buffer overflow");
        self.resident += 1;
        self.scopes
            .entry(op.scope)
            .or_insert_with(|| ScopeQueue {
                waiting: VecDeque::new(),
                busy_until: None,
            })
            .waiting
            .push_back(op);
        ArrivalSample {
            occupancy: self.resident,
            unique_scopes: self.scopes.len(),
        }
    }

    pub fn is_busy(&self, scope: ScopeId) -> bool {
        self.scopes.get(&scope).is_some_and(|q| q.busy_until.is_some())
    }

    /// Next op to start in `scope`, if any.
    pub fn peek(&self, scope: ScopeId) -> Option<&PimOpDescriptor> {
        self.scopes.get(&scope)?.waiting.front()
    }

    /// Scopes with an executing op.
    pub fn busy_scopes(&self) -> usize {
        self.scopes.values().filter(|q| q.busy_until.is_some()).count()
    }

    /// Starts the head op of an idle scope, returning it.
    pub fn start(&mut self, scope: ScopeId, now: u64, latency: u64) -> Option<PimOpDescriptor> {
        let q = self.scopes.get_mut(&scope)?;
        if q.busy_until.is_some() {
            return None;
        }
        let op = q.waiting.pop_front()?;
        q.busy_until = Some(now + latency);
        Some(op)
    }

    /// Retires the executing op of `scope`.
    pub fn complete(&mut self, scope: ScopeId) {
        let q = self.scopes.get_mut(&scope).expect("completion for an idle scope");
        assert!(q.busy_until.take().is_some(), "completion for an idle scope");
        self.resident -= 1;
        if q.waiting.is_empty() {
            self.scopes.remove(&scope);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::PimOpcode;

    fn op(s: u32) -> PimOpDescriptor {
        PimOpDescriptor::filter(ScopeId(s), PimOpcode::FilterEq, 0, 1, 0)
    }

    /// Runs ops that all arrive at t=0 and returns each completion time.
    fn completions(ops: &[u32], lat: u64) -> Vec<u64> {
        let mut b = PimBuffer::new(None);
        for &s in ops {
            b.enqueue(op(s));
        }
        let mut done = Vec::new();
        let mut now = 0;
        let mut running: Vec<(u64, ScopeId)> = Vec::new();
        loop {
            let scopes: Vec<ScopeId> = b.scopes.keys().copied().collect();
            for s in scopes {
                if b.start(s, now, lat).is_some() {
                    running.push((now + lat, s));
                }
            }
            running.sort();
            if running.is_empty() {
                return done;
            }
            let (t, s) = running.remove(0);
            now = t;
            b.complete(s);
            done.push(t);
        }
    }

    #[test]
    fn scopes_run_in_parallel_and_serialize_within() {
        assert_eq!(completions(&[1, 2], 1000), vec![1000, 1000]);
        assert_eq!(completions(&[1, 1], 1000), vec![1000, 2000]);
    }

    #[test]
    fn bounded_buffer_reports_full() {
        let mut b = PimBuffer::new(Some(16));
        for i in 0..16 {
            assert!(b.has_space());
            b.enqueue(op(i % 3));
        }
        assert!(!b.has_space());
        b.start(ScopeId(0), 0, 5).unwrap();
        assert!(!b.has_space(), "executing ops stay resident");
        b.complete(ScopeId(0));
        assert!(b.has_space());
    }

    #[test]
    fn unbounded_always_accepts() {
        let mut b = PimBuffer::new(None);
        for _ in 0..100 {
            assert!(b.has_space());
            b.enqueue(op(0));
        }
        assert_eq!(b.resident(), 100);
    }

    #[test]
    fn arrival_samples_count_distinct_scopes() {
        let mut b = PimBuffer::new(None);
        assert_eq!(b.enqueue(op(4)), ArrivalSample { occupancy: 1, unique_scopes: 1 });
        b.enqueue(op(4));
        assert_eq!(b.enqueue(op(7)), ArrivalSample { occupancy: 3, unique_scopes: 2 });
    }

    #[test]
    fn per_scope_order_is_arrival_order() {
        let mut b = PimBuffer::new(None);
        let a = PimOpDescriptor::filter(ScopeId(0), PimOpcode::FilterEq, 0, 1, 0);
        let c = PimOpDescriptor::filter(ScopeId(0), PimOpcode::FilterEq, 0, 2, 0);
        b.enqueue(a);
        b.enqueue(c);
        assert_eq!(b.start(ScopeId(0), 0, 0), Some(a));
        assert_eq!(b.start(ScopeId(0), 0, 0), None);
        b.complete(ScopeId(0));
        assert_eq!(b.start(ScopeId(0), 0, 0), Some(c));
    }
}
