//! Reference TSO outcome enumerator, independent of the simulator: each
//! thread has a FIFO store buffer with store-to-load forwarding, and any
//! thread may either issue its next instruction or drain its oldest store.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};

#[derive(Clone, Copy, Debug)]
pub enum Op {
    St(&'static str, u64),
    Ld(&'static str, u8),
    Fence,
}

pub type Outcome = BTreeMap<String, u64>;

#[derive(Clone, PartialEq, Eq, Hash)]
struct State {
    pc: Vec<usize>,
    buffers: Vec<Vec<(&'static str, u64)>>,
    memory: BTreeMap<&'static str, u64>,
    regs: BTreeMap<(usize, u8), u64>,
}

/// Every final register valuation reachable under TSO, keyed `t:rN`.
/// Locations start at zero.
pub fn tso_outcomes(threads: &[Vec<Op>]) -> BTreeSet<Outcome> {
    let start = State {
        pc: vec![0; threads.len()],
        buffers: vec![Vec::new(); threads.len()],
        memory: BTreeMap::new(),
        regs: BTreeMap::new(),
    };
    let mut seen = HashSet::new();
    let mut stack = vec![start];
    let mut out = BTreeSet::new();
    while let Some(s) = stack.pop() {
        if !seen.insert(s.clone()) {
            continue;
        }
        let mut stuck = true;
        for (t, prog) in threads.iter().enumerate() {
            if let Some(&(loc, v)) = s.buffers[t].first() {
                let mut n = s.clone();
                n.buffers[t].remove(0);
                n.memory.insert(loc, v);
                stack.push(n);
                stuck = false;
            }
            let Some(&op) = prog.get(s.pc[t]) else { continue };
            let mut n = s.clone();
            n.pc[t] += 1;
            match op {
                Op::St(loc, v) => n.buffers[t].push((loc, v)),
                Op::Ld(loc, r) => {
                    let fwd = s.buffers[t].iter().rev().find(|(l, _)| *l == loc).map(|&(_, v)| v);
                    let v = fwd.unwrap_or_else(|| s.memory.get(loc).copied().unwrap_or(0));
                    n.regs.insert((t, r), v);
                }
                Op::Fence if !s.buffers[t].is_empty() => continue,
                Op::Fence => {}
            }
            stack.push(n);
            stuck = false;
        }
        if stuck {
            out.insert(s.regs.iter().map(|(&(t, r), &v)| (format!("{t}:r{r}"), v)).collect());
        }
    }
    out
}

pub fn sb() -> Vec<Vec<Op>> {
    vec![vec![Op::St("X", 1), Op::Ld("Y", 0)], vec![Op::St("Y", 1), Op::Ld("X", 1)]]
}

pub fn mp() -> Vec<Vec<Op>> {
    vec![vec![Op::St("X", 1), Op::St("Y", 1)], vec![Op::Ld("Y", 0), Op::Ld("X", 1)]]
}

/// Keeps only register entries (`t:rN`) of a simulator valuation.
pub fn registers_only(v: &BTreeMap<String, u64>) -> Outcome {
    v.iter()
        .filter(|(k, _)| k.split_once(':').is_some_and(|(t, r)| t.parse::<usize>().is_ok() && r.starts_with('r')))
        .map(|(k, &v)| (k.clone(), v))
        .collect()
}
