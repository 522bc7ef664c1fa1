//! Sparse backing store and the functional semantics of PIM ops.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::types::{AddressMap, LineAddr, LineData, PhysAddr, PimOpDescriptor, PimOpcode, ScopeId, WORDS_PER_LINE};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Memory {
    lines: HashMap<LineAddr, LineData>,
}

/// Nonzero words of one scope, keyed by byte address.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeImage {
    pub scope: u32,
    pub words: BTreeMap<u64, u64>,
}

impl Memory {
    pub fn read_line(&self, line: LineAddr) -> LineData {
        self.lines.get(&line).copied().unwrap_or([0; WORDS_PER_LINE])
    }

    pub fn write_line(&mut self, line: LineAddr, data: LineData) {
        if data == [0; WORDS_PER_LINE] {
            self.lines.remove(&line);
        } else {
            self.lines.insert(line, data);
        }
    }

    pub fn read_word(&self, addr: PhysAddr) -> u64 {
        self.lines.get(&addr.line()).map_or(0, |d| d[addr.word()])
    }

    pub fn write_word(&mut self, addr: PhysAddr, val: u64) {
        let mut d = self.read_line(addr.line());
        d[addr.word()] = val;
        self.write_line(addr.line(), d);
    }

    /// Every nonzero word, keyed by byte address.
    pub fn words(&self) -> BTreeMap<u64, u64> {
        let mut out = BTreeMap::new();
        for (line, data) in &self.lines {
            for (w, &v) in data.iter().enumerate() {
                if v != 0 {
                    out.insert(line.base().0 + w as u64 * 8, v);
                }
            }
        }
        out
    }

    pub fn export_scope(&self, map: &AddressMap, scope: ScopeId) -> ScopeImage {
        let base = map.scope_base(scope).0;
        let words = self
            .words()
            .range(base..base + map.scope_size)
            .map(|(&a, &v)| (a, v))
            .collect();
        ScopeImage { scope: scope.0, words }
    }

    /// Replaces the contents of the image's scope with the image.
    pub fn import_scope(&mut self, map: &AddressMap, img: &ScopeImage) -> Result<(), String> {
        let scope = ScopeId(img.scope);
        if scope.0 >= map.n_scopes {
            return Err(format!("scope {scope} outside the PIM region"));
        }
        if let Some((&a, _)) = img.words.iter().find(|(&a, _)| map.scope_of(PhysAddr(a)) != Some(scope) || a % 8 != 0) {
            return Err(format!("word {a:#x} is not an aligned address of {scope}"));
        }
        let base = map.scope_base(scope).0;
        self.lines
            .retain(|l, _| l.base().0 < base || l.base().0 >= base + map.scope_size);
        for (&a, &v) in &img.words {
            self.write_word(PhysAddr(a), v);
        }
        Ok(())
    }

    fn mask_word(&self, map: &AddressMap, s: ScopeId, m: u8, w: u32) -> u64 {
        self.read_word(map.mask_word_addr(s, m, w))
    }

    /// Applies one PIM op to the scope image.
    pub fn apply_pim(&mut self, map: &AddressMap, op: &PimOpDescriptor) {
        let s = op.scope;
        let words = map.mask_words();
        match op.opcode {
            PimOpcode::FilterEq | PimOpcode::FilterLt => {
                for w in 0..words {
                    let mut bits = 0u64;
                    for b in 0..64 {
                        let v = self.read_word(map.field_addr(s, op.field, w * 64 + b));
                        let hit = match op.opcode {
                            PimOpcode::FilterEq => v == op.immediate,
                            _ => v < op.immediate,
                        };
                        bits |= (hit as u64) << b;
                    }
                    self.write_word(map.mask_word_addr(s, op.dst, w), bits);
                }
            }
            PimOpcode::MaskAnd | PimOpcode::MaskOr | PimOpcode::MaskNot => {
                for w in 0..words {
                    let a = self.mask_word(map, s, op.src[0], w);
                    let b = self.mask_word(map, s, op.src[1], w);
                    let r = match op.opcode {
                        PimOpcode::MaskAnd => a & b,
                        PimOpcode::MaskOr => a | b,
                        _ => !a,
                    };
                    self.write_word(map.mask_word_addr(s, op.dst, w), r);
                }
            }
            PimOpcode::Aggregate => {
                let mut sum = 0u64;
                for w in 0..words {
                    let bits = self.mask_word(map, s, op.src[0], w);
                    for b in 0..64 {
                        if bits >> b & 1 == 1 {
                            sum = sum.wrapping_add(self.read_word(map.field_addr(s, op.field, w * 64 + b)));
                        }
                    }
                }
                self.write_word(map.agg_addr(s, op.dst), sum);
            }
        }
    }
}
