//! Set-associative cache arrays with a scope bit-vector and an optional
//! scope buffer. Protocol behaviour lives in the L1/LLC controllers; this
//! module only owns the storage and its bookkeeping.

use std::collections::HashMap;

use serde::Serialize;

use crate::types::{LineAddr, LineData, ScopeId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Mesi {
    M,
    E,
    S,
}

#[derive(Clone, Debug)]
pub struct CacheLine {
    pub line: LineAddr,
    pub state: Mesi,
    pub data: LineData,
    pub scope: Option<ScopeId>,
    /// LLC only: the copy differs from memory.
    pub dirty: bool,
    /// LLC only: L1s holding the line.
    pub sharers: u64,
    /// LLC only: L1 holding the line in E or M.
    pub owner: Option<u16>,
    lru: u64,
}

impl CacheLine {
    pub fn new(line: LineAddr, state: Mesi, data: LineData, scope: Option<ScopeId>) -> Self {
        CacheLine {
            line,
            state,
            data,
            scope,
            dirty: false,
            sharers: 0,
            owner: None,
            lru: 0,
        }
    }

    pub fn pim_enabled(&self) -> bool {
        self.scope.is_some()
    }
}

/// Recently flushed scopes, set-associative with LRU replacement.
#[derive(Clone, Debug)]
pub struct ScopeBuffer {
    sets: Vec<Vec<(ScopeId, u64)>>,
    ways: usize,
    clock: u64,
}

impl ScopeBuffer {
    pub fn new(sets: u32, ways: u32) -> Self {
        ScopeBuffer {
            sets: vec![Vec::new(); sets as usize],
            ways: ways as usize,
            clock: 0,
        }
    }

    fn set_of(&self, s: ScopeId) -> usize {
        s.0 as usize % self.sets.len()
    }

    pub fn contains(&self, s: ScopeId) -> bool {
        self.sets[self.set_of(s)].iter().any(|&(e, _)| e == s)
    }

    /// Lookup that refreshes the entry's LRU stamp on a hit.
    pub fn lookup(&mut self, s: ScopeId) -> bool {
        self.clock += 1;
        let clock = self.clock;
        let idx = self.set_of(s);
        match self.sets[idx].iter_mut().find(|(e, _)| *e == s) {
            Some(entry) => {
                entry.1 = clock;
                true
            }
            None => false,
        }
    }

    /// Inserts `s`, overwriting the LRU entry of a full set. Returns the
    /// displaced scope, if any.
    pub fn insert(&mut self, s: ScopeId) -> Option<ScopeId> {
        if self.lookup(s) {
            return None;
        }
        let clock = self.clock;
        let ways = self.ways;
        let idx = self.set_of(s);
        let set = &mut self.sets[idx];
        if set.len() < ways {
            set.push((s, clock));
            return None;
        }
        let victim = set
            .iter_mut()
            .min_by_key(|(_, stamp)| *stamp)
            .expect("full set has entries");
        let old = victim.0;
        *victim = (s, clock);
        Some(old)
    }

    pub fn erase(&mut self, s: ScopeId) -> bool {
        let idx = self.set_of(s);
        let set = &mut self.sets[idx];
        let before = set.len();
        set.retain(|&(e, _)| e != s);
        set.len() != before
    }

    pub fn scopes(&self) -> impl Iterator<Item = ScopeId> + '_ {
        self.sets.iter().flatten().map(|&(s, _)| s)
    }
}

/// Result of walking a cache for one scope.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ScanPlan {
    pub sets_visited: u32,
    pub lines: Vec<LineAddr>,
}

impl ScanPlan {
    pub fn latency(&self, per_set: u64, per_line: u64, fixed: u64) -> u64 {
        per_set * self.sets_visited as u64 + per_line * self.lines.len() as u64 + fixed
    }
}

#[derive(Clone, Debug)]
pub struct CacheArray {
    sets: Vec<Vec<CacheLine>>,
    ways: usize,
    set_mask: u64,
    sbv: Vec<bool>,
    sbv_high: u32,
    scope_buffer: Option<ScopeBuffer>,
    resident: HashMap<ScopeId, u32>,
    clock: u64,
}

impl CacheArray {
    pub fn new(n_sets: u32, ways: u32, scope_buffer: Option<ScopeBuffer>) -> Self {
        assert!(n_sets.is_power_of_two(), "set count must be a power of two");
        CacheArray {
            sets: vec![Vec::new(); n_sets as usize],
            ways: ways as usize,
            set_mask: n_sets as u64 - 1,
            sbv: vec![false; n_sets as usize],
            sbv_high: 0,
            scope_buffer,
            resident: HashMap::new(),
            clock: 0,
        }
    }

    pub fn n_sets(&self) -> u32 {
        self.sets.len() as u32
    }

    pub fn set_index(&self, line: LineAddr) -> usize {
        (line.0 & self.set_mask) as usize
    }

    pub fn sbv(&self, set: usize) -> bool {
        self.sbv[set]
    }

    pub fn sbv_high_count(&self) -> u32 {
        self.sbv_high
    }

    pub fn scope_buffer(&self) -> Option<&ScopeBuffer> {
        self.scope_buffer.as_ref()
    }

    pub fn scope_buffer_mut(&mut self) -> Option<&mut ScopeBuffer> {
        self.scope_buffer.as_mut()
    }

    /// Valid lines of `scope` currently held.
    pub fn resident_in_scope(&self, scope: ScopeId) -> u32 {
        self.resident.get(&scope).copied().unwrap_or(0)
    }

    pub fn get(&self, line: LineAddr) -> Option<&CacheLine> {
        self.sets[self.set_index(line)].iter().find(|l| l.line == line)
    }

    pub fn get_mut(&mut self, line: LineAddr) -> Option<&mut CacheLine> {
        let idx = self.set_index(line);
        self.sets[idx].iter_mut().find(|l| l.line == line)
    }

    pub fn touch(&mut self, line: LineAddr) {
        self.clock += 1;
        let clock = self.clock;
        if let Some(l) = self.get_mut(line) {
            l.lru = clock;
        }
    }

    pub fn set_full(&self, line: LineAddr) -> bool {
        self.sets[self.set_index(line)].len() >= self.ways
    }

    /// LRU line of `line`'s set among those `excluded` does not reject.
    pub fn pick_victim(&self, line: LineAddr, excluded: impl Fn(LineAddr) -> bool) -> Option<LineAddr> {
        self.sets[self.set_index(line)]
            .iter()
            .filter(|l| !excluded(l.line))
            .min_by_key(|l| l.lru)
            .map(|l| l.line)
    }

    /// Installs a line into a set with a free way: sets the SBV bit for a
    /// PIM line and erases the line's scope from the scope buffer.
    pub fn install(&mut self, mut entry: CacheLine) {
        let idx = self.set_index(entry.line);
        assert!(self.sets[idx].len() < self.ways, "install into a full set");
        assert!(self.get(entry.line).is_none(), "line {:?} installed twice", entry.line);
        self.clock += 1;
        entry.lru = self.clock;
        if let Some(scope) = entry.scope {
            if !self.sbv[idx] {
                self.sbv[idx] = true;
                self.sbv_high += 1;
            }
            *self.resident.entry(scope).or_insert(0) += 1;
            if let Some(sb) = self.scope_buffer.as_mut() {
                sb.erase(scope);
            }
        }
        self.sets[idx].push(entry);
    }

    /// Evicts or invalidates a line; a PIM line triggers the SBV recheck of
    /// its set.
    pub fn remove(&mut self, line: LineAddr) -> Option<CacheLine> {
        let idx = self.set_index(line);
        let pos = self.sets[idx].iter().position(|l| l.line == line)?;
        let entry = self.sets[idx].swap_remove(pos);
        if let Some(scope) = entry.scope {
            let n = self.resident.get_mut(&scope).expect("resident count");
            *n -= 1;
            if *n == 0 {
                self.resident.remove(&scope);
            }
            let still = self.sets[idx].iter().any(|l| l.pim_enabled());
            if !still && self.sbv[idx] {
                self.sbv[idx] = false;
                self.sbv_high -= 1;
            }
        }
        Some(entry)
    }

    /// Lines of `scope`, found by visiting only the SBV-high sets.
    pub fn plan_scan(&self, scope: ScopeId) -> ScanPlan {
        let mut plan = ScanPlan::default();
        for (i, set) in self.sets.iter().enumerate() {
            if !self.sbv[i] {
                continue;
            }
            plan.sets_visited += 1;
            plan.lines.extend(set.iter().filter(|l| l.scope == Some(scope)).map(|l| l.line));
        }
        plan
    }

    pub fn lines(&self) -> impl Iterator<Item = &CacheLine> {
        self.sets.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Full recomputation of the SBV, scope-buffer and residency bookkeeping.
    pub fn check(&self, name: &str) -> Vec<String> {
        let mut errs = Vec::new();
        let mut counts: HashMap<ScopeId, u32> = HashMap::new();
        for (i, set) in self.sets.iter().enumerate() {
            let any_pim = set.iter().any(|l| l.pim_enabled());
            if any_pim != self.sbv[i] {
                errs.push(format!("{name}: SBV bit of set {i} is {} but set holds PIM lines = {any_pim}", self.sbv[i]));
            }
            for (j, l) in set.iter().enumerate() {
                if set[..j].iter().any(|o| o.line == l.line) {
                    errs.push(format!("{name}: line {:#x} in two ways of set {i}", l.line.0));
                }
                if let Some(s) = l.scope {
                    *counts.entry(s).or_insert(0) += 1;
                }
            }
        }
        if self.sbv.iter().filter(|&&b| b).count() as u32 != self.sbv_high {
            errs.push(format!("{name}: SBV population counter out of sync"));
        }
        if counts != self.resident {
            errs.push(format!("{name}: per-scope residency counters out of sync"));
        }
        if let Some(sb) = &self.scope_buffer {
            for s in sb.scopes() {
                if let Some(&n) = counts.get(&s) {
                    errs.push(format!("{name}: scope {s} is in the scope buffer with {n} resident lines"));
                }
            }
        }
        errs
    }

    /// JSON image: set index -> [line, state, pim_enabled] for non-empty sets.
    pub fn dump(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (i, set) in self.sets.iter().enumerate() {
            if set.is_empty() {
                continue;
            }
            let mut lines: Vec<_> = set.iter().collect();
            lines.sort_by_key(|l| l.line);
            let entries = lines
                .iter()
                .map(|l| serde_json::json!([l.line.0, l.state, l.pim_enabled()]))
                .collect();
            map.insert(i.to_string(), serde_json::Value::Array(entries));
        }
        serde_json::Value::Object(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SETS: u64 = 64;

    fn pim_line(set: u64, tag: u64, scope: u32) -> CacheLine {
        CacheLine::new(LineAddr(tag * SETS + set), Mesi::S, [0; 8], Some(ScopeId(scope)))
    }

    fn plain_line(set: u64, tag: u64) -> CacheLine {
        CacheLine::new(LineAddr(tag * SETS + set), Mesi::S, [0; 8], None)
    }

    fn array() -> CacheArray {
        CacheArray::new(SETS as u32, 4, Some(ScopeBuffer::new(4, 2)))
    }

    #[test]
    fn fill_sets_sbv_and_erases_scope() {
        let mut c = array();
        c.scope_buffer_mut().unwrap().insert(ScopeId(2));
        c.install(plain_line(7, 1));
        assert!(!c.sbv(7));
        assert!(c.scope_buffer().unwrap().contains(ScopeId(2)));
        c.install(pim_line(7, 2, 2));
        assert!(c.sbv(7));
        assert!(!c.scope_buffer().unwrap().contains(ScopeId(2)));
    }

    #[test]
    fn evict_rechecks_remaining_lines() {
        let mut c = array();
        c.install(pim_line(5, 1, 0));
        c.install(pim_line(5, 2, 1));
        c.install(plain_line(5, 3));
        c.remove(LineAddr(SETS + 5));
        assert!(c.sbv(5), "another PIM line remains");
        c.remove(LineAddr(3 * SETS + 5));
        assert!(c.sbv(5), "non-PIM eviction leaves the bit alone");
        c.remove(LineAddr(2 * SETS + 5));
        assert!(!c.sbv(5), "last PIM line gone");
        assert!(c.check("t").is_empty());
    }

    #[test]
    fn all_low_scan_visits_nothing() {
        let mut c = array();
        c.install(plain_line(1, 1));
        let plan = c.plan_scan(ScopeId(0));
        assert_eq!(plan, ScanPlan::default());
        assert_eq!(plan.latency(1, 4, 4), 4);
    }

    #[test]
    fn scan_visits_high_sets_and_selects_only_the_scope() {
        let mut c = array();
        c.install(pim_line(3, 1, 0));
        c.install(pim_line(9, 1, 0));
        c.install(pim_line(9, 2, 0));
        c.install(pim_line(17, 1, 1));
        let plan = c.plan_scan(ScopeId(0));
        assert_eq!(plan.sets_visited, 3);
        // Brute force over the whole image.
        let mut expect: Vec<_> = c.lines().filter(|l| l.scope == Some(ScopeId(0))).map(|l| l.line).collect();
        let mut got = plan.lines.clone();
        expect.sort();
        got.sort();
        assert_eq!(got, expect);
        assert_eq!(plan.latency(1, 4, 4), 3 + 12 + 4);
    }

    #[test]
    fn skip_ratio_arithmetic() {
        let mut c = CacheArray::new(2048, 16, None);
        for set in 0..120u64 {
            c.install(CacheLine::new(LineAddr(set), Mesi::S, [0; 8], Some(ScopeId(0))));
        }
        let plan = c.plan_scan(ScopeId(0));
        let skip = (2048 - plan.sets_visited) as f64 / 2048.0;
        assert!((skip - 0.941_406_25).abs() < 1e-12);
    }

    #[test]
    fn scope_buffer_lru_replacement() {
        let mut sb = ScopeBuffer::new(1, 2);
        sb.insert(ScopeId(1));
        sb.insert(ScopeId(2));
        assert!(sb.lookup(ScopeId(1)));
        assert_eq!(sb.insert(ScopeId(3)), Some(ScopeId(2)));
        assert!(sb.contains(ScopeId(1)) && sb.contains(ScopeId(3)));
    }

    #[test]
    fn victim_skips_excluded_lines() {
        let mut c = array();
        for tag in 0..4 {
            c.install(plain_line(0, tag));
        }
        assert!(c.set_full(LineAddr(0)));
        assert_eq!(c.pick_victim(LineAddr(0), |_| false), Some(LineAddr(0)));
        assert_eq!(c.pick_victim(LineAddr(0), |l| l == LineAddr(0)), Some(LineAddr(SETS)));
    }

    #[derive(Clone, Debug)]
    enum Op {
        Fill { set: u64, tag: u64, scope: Option<u32> },
        Evict { set: u64, tag: u64 },
        Flush { scope: u32 },
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0..4u64, 0..6u64, prop::option::of(0..6u32)).prop_map(|(set, tag, scope)| Op::Fill { set, tag, scope }),
            (0..4u64, 0..6u64).prop_map(|(set, tag)| Op::Evict { set, tag }),
            (0..6u32).prop_map(|scope| Op::Flush { scope }),
        ]
    }

    proptest! {
        #[test]
        fn bookkeeping_survives_any_sequence(ops in prop::collection::vec(op(), 1..200)) {
            let mut c = array();
            for op in ops {
                match op {
                    Op::Fill { set, tag, scope } => {
                        let line = LineAddr(tag * SETS + set);
                        if c.get(line).is_some() {
                            continue;
                        }
                        if c.set_full(line) {
                            let v = c.pick_victim(line, |_| false).unwrap();
                            c.remove(v);
                        }
                        c.install(CacheLine::new(line, Mesi::E, [0; 8], scope.map(ScopeId)));
                    }
                    Op::Evict { set, tag } => {
                        c.remove(LineAddr(tag * SETS + set));
                    }
                    Op::Flush { scope } => {
                        for l in c.plan_scan(ScopeId(scope)).lines {
                            c.remove(l);
                        }
                        c.scope_buffer_mut().unwrap().insert(ScopeId(scope));
                        prop_assert_eq!(c.resident_in_scope(ScopeId(scope)), 0);
                    }
                }
                let errs = c.check("prop");
                prop_assert!(errs.is_empty(), "{:?}", errs);
            }
        }
    }
}
