//! Analytic query templates: a chain of filters per scope, optionally
//! combined and aggregated, repeated a number of times.

use serde::{Deserialize, Serialize};

use super::{invalid, thread_scopes, Logical, LogicalOp, WorkloadError};
use crate::engine::RngStream;
use crate::memory::Memory;
use crate::types::{AddressMap, PimOpDescriptor, PimOpcode, MASK_REGS, MAX_FIELDS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryKind {
    /// Filters, then every result-mask word is read.
    FilterOnly,
    /// Filters combined by conjunction and summed; only the sum is read.
    FullQuery,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryTemplate {
    pub query: QueryKind,
    pub n_scopes: u32,
    /// Filters per scope.
    pub pim_ops_per_scope: u32,
    /// Fraction of records each filter keeps.
    pub selectivity: f64,
    pub repetitions: u32,
    pub n_threads: usize,
    pub seed: u64,
}

impl Default for QueryTemplate {
    fn default() -> Self {
        QueryTemplate {
            query: QueryKind::FilterOnly,
            n_scopes: 4,
            pim_ops_per_scope: 3,
            selectivity: 0.5,
            repetitions: 10,
            n_threads: 1,
            seed: 1,
        }
    }
}

const FILTER_FIELDS: u8 = MAX_FIELDS - 1;

impl QueryTemplate {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.n_scopes == 0 {
            return Err(invalid("n_scopes", "must be at least 1"));
        }
        if self.n_threads == 0 || self.n_threads as u32 > self.n_scopes {
            return Err(invalid("n_threads", "must be between 1 and n_scopes"));
        }
        if self.pim_ops_per_scope == 0 || self.pim_ops_per_scope > MASK_REGS as u32 - 1 {
            return Err(invalid("pim_ops_per_scope", format!("must be in 1..={}", MASK_REGS - 1)));
        }
        if !(0.0..=1.0).contains(&self.selectivity) {
            return Err(invalid("selectivity", "must be in [0, 1]"));
        }
        if self.repetitions == 0 {
            return Err(invalid("repetitions", "must be at least 1"));
        }
        Ok(())
    }

    /// PIM ops of one scope for one repetition.
    fn chain(&self, s: crate::types::ScopeId) -> Vec<PimOpDescriptor> {
        let k = self.pim_ops_per_scope as u8;
        let imm = (self.selectivity * u64::MAX as f64) as u64;
        let mut ops: Vec<PimOpDescriptor> = (0..k)
            .map(|j| PimOpDescriptor::filter(s, PimOpcode::FilterLt, 1 + j % FILTER_FIELDS, imm, j))
            .collect();
        if self.query == QueryKind::FullQuery {
            for j in 1..k {
                ops.push(PimOpDescriptor::mask(s, PimOpcode::MaskAnd, [0, j], 0));
            }
            ops.push(PimOpDescriptor::aggregate(s, 1, 0, 0));
        }
        ops
    }

    pub fn generate(&self, map: &AddressMap) -> Result<Logical, WorkloadError> {
        self.validate()?;
        let mut rng = RngStream::new(self.seed, "query:image");
        let mut image = Memory::default();
        for s in 0..self.n_scopes {
            let s = crate::types::ScopeId(s);
            for slot in 0..map.slots_per_scope {
                image.write_word(map.field_addr(s, 0, slot), slot as u64);
                for f in 1..=FILTER_FIELDS {
                    image.write_word(map.field_addr(s, f, slot), rng.next_u64());
                }
            }
        }
        let mut threads = Vec::new();
        for scopes in thread_scopes(self.n_scopes, self.n_threads) {
            let ops: Vec<_> = scopes.iter().map(|&s| (s, self.chain(s))).collect();
            let reads = match self.query {
                QueryKind::FilterOnly => {
                    let last = self.pim_ops_per_scope as u8 - 1;
                    scopes
                        .iter()
                        .flat_map(|&s| (0..map.mask_words()).map(move |w| map.mask_word_addr(s, last, w)))
                        .collect()
                }
                QueryKind::FullQuery => scopes.iter().map(|&s| map.agg_addr(s, 0)).collect(),
            };
            let scan = LogicalOp::Scan { ops, reads };
            threads.push(vec![scan; self.repetitions as usize]);
        }
        Ok(Logical { threads, image })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ScopeId;

    fn map() -> AddressMap {
        AddressMap::new(0x4000_0000, 2 << 20, 16, 1024).unwrap()
    }

    fn totals(t: &QueryTemplate) -> (usize, usize, usize) {
        let l = t.generate(&map()).unwrap();
        let (mut pim, mut reads, mut read_scopes) = (0, 0, std::collections::BTreeSet::new());
        for op in l.threads.iter().flatten().take(1) {
            let LogicalOp::Scan { ops, reads: r } = op else { unreachable!() };
            pim += ops.iter().map(|(_, v)| v.len()).sum::<usize>();
            reads += r.len();
            for a in r {
                read_scopes.insert(map().scope_of(*a).unwrap());
            }
        }
        (pim, reads, read_scopes.len())
    }

    #[test]
    fn filter_only_counts() {
        let t = QueryTemplate {
            repetitions: 1,
            ..QueryTemplate::default()
        };
        let (pim, _, scopes) = totals(&t);
        assert_eq!(pim, 12);
        assert_eq!(scopes, 4);
    }

    #[test]
    fn full_query_has_more_ops_and_fewer_reads() {
        let f = QueryTemplate {
            n_scopes: 1,
            ..QueryTemplate::default()
        };
        let q = QueryTemplate {
            query: QueryKind::FullQuery,
            ..f.clone()
        };
        let (fp, fr, _) = totals(&f);
        let (qp, qr, _) = totals(&q);
        assert!(qp > fp && qr < fr, "{qp} vs {fp}, {qr} vs {fr}");
    }

    #[test]
    fn repetitions_are_identical() {
        let l = QueryTemplate::default().generate(&map()).unwrap();
        assert_eq!(l.threads[0].len(), 10);
        assert!(l.threads[0].windows(2).all(|w| w[0] == w[1]));
        let _ = ScopeId(0);
    }
}
