//! Sequential reference executor used as the functional oracle.

use crate::memory::Memory;
use crate::program::{Stmt, ThreadProgram};
use crate::types::AddressMap;

#[derive(Clone, Debug)]
pub struct ReferenceRun {
    pub memory: Memory,
    /// Value of every load, indexed by thread then statement.
    pub loads: Vec<Vec<Option<u64>>>,
}

/// Runs the threads one phase at a time, round-robin, applying PIM ops
/// functionally. Fences, flushes and delays have no functional effect.
pub fn reference_execute(programs: &[ThreadProgram], image: &Memory, map: &AddressMap) -> ReferenceRun {
    let mut memory = image.clone();
    let mut loads: Vec<Vec<Option<u64>>> = programs.iter().map(|p| vec![None; p.stmts.len()]).collect();
    let mut pcs = vec![0usize; programs.len()];
    loop {
        let mut progressed = false;
        for (t, p) in programs.iter().enumerate() {
            let mut first = true;
            while let Some(s) = p.stmts.get(pcs[t]) {
                if *s == Stmt::Phase && !first {
                    break;
                }
                first = false;
                match *s {
                    Stmt::Load { addr, .. } => loads[t][pcs[t]] = Some(memory.read_word(addr)),
                    Stmt::Store { addr, val } => memory.write_word(addr, val),
                    Stmt::Pim(op) => memory.apply_pim(map, &op),
                    _ => {}
                }
                pcs[t] += 1;
                progressed = true;
            }
        }
        if !progressed {
            return ReferenceRun { memory, loads };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::Symbols;
    use crate::types::{PhysAddr, PimOpDescriptor, PimOpcode, ScopeId};

    fn map() -> AddressMap {
        AddressMap::new(0x4000_0000, 2 << 20, 2, 1024).unwrap()
    }

    #[test]
    fn load_sees_earlier_store() {
        let p = ThreadProgram::parse("st 0x1000 7\nld 0x1000 r0", &Symbols::default()).unwrap();
        let r = reference_execute(&[p], &Memory::default(), &map());
        assert_eq!(r.loads[0][1], Some(7));
    }

    #[test]
    fn phases_interleave_round_robin() {
        let syms = Symbols::default();
        let a = ThreadProgram::parse("phase\nst 0x1000 1\nphase\nld 0x2000", &syms).unwrap();
        let b = ThreadProgram::parse("phase\nld 0x1000\nst 0x2000 2", &syms).unwrap();
        let r = reference_execute(&[a, b], &Memory::default(), &map());
        assert_eq!(r.loads[1][1], Some(1));
        assert_eq!(r.loads[0][3], Some(2));
    }

    #[test]
    fn filter_matches_a_brute_force_scan() {
        let m = map();
        let mut img = Memory::default();
        for slot in 0..1024u32 {
            img.write_word(m.field_addr(ScopeId(1), 2, slot), (slot as u64 * 37) % 101);
        }
        let op = PimOpDescriptor::filter(ScopeId(1), PimOpcode::FilterEq, 2, 5, 4);
        let p = ThreadProgram {
            stmts: vec![Stmt::Pim(op)],
        };
        let r = reference_execute(&[p], &img, &m);
        for slot in 0..1024u32 {
            let word = r.memory.read_word(m.mask_word_addr(ScopeId(1), 4, slot / 64));
            let bit = word >> (slot % 64) & 1 == 1;
            assert_eq!(bit, (slot as u64 * 37) % 101 == 5, "slot {slot}");
        }
        assert_eq!(r.memory.read_word(PhysAddr(0x1000)), 0);
    }
}
