//! YCSB-style mix of range scans and inserts.
//!
//! Field 0 of every record holds its key; empty slots hold `u64::MAX` so no
//! range predicate selects them. A scan of `[b, b+len)` runs two less-than
//! filters, an inversion and a conjunction in every scope of the thread,
//! then reads the result mask and one field of each selected record.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_distr::{Binomial, Distribution, Zipf};
use serde::{Deserialize, Serialize};

use super::{invalid, thread_scopes, Logical, LogicalOp, WorkloadError};
use crate::engine::RngStream;
use crate::memory::Memory;
use crate::types::{AddressMap, PhysAddr, PimOpDescriptor, PimOpcode, ScopeId, MAX_FIELDS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct YcsbConfig {
    pub n_ops: u64,
    pub scan_pct: f64,
    pub insert_pct: f64,
    pub fields_per_record: u8,
    pub field_len_bytes: u32,
    pub scan_len_min: u64,
    pub scan_len_max: u64,
    pub zipf_exponent: f64,
    pub n_records: u64,
    pub n_threads: usize,
    pub n_scopes: u32,
    pub seed: u64,
}

impl Default for YcsbConfig {
    fn default() -> Self {
        YcsbConfig {
            n_ops: 1000,
            scan_pct: 0.95,
            insert_pct: 0.05,
            fields_per_record: 5,
            field_len_bytes: 10,
            scan_len_min: 1,
            scan_len_max: 100,
            zipf_exponent: 0.99,
            n_records: 4096,
            n_threads: 4,
            n_scopes: 16,
            seed: 1,
        }
    }
}

/// Scan length, uniform on `[lo, hi]`.
pub fn sample_scan_len(rng: &mut impl RngCore, lo: u64, hi: u64) -> u64 {
    rng.random_range(lo..=hi)
}

/// Zipfian start position over `0..n`, rank 1 most popular.
#[derive(Clone, Copy, Debug)]
pub struct ZipfBase {
    dist: Zipf<f64>,
}

impl ZipfBase {
    pub fn new(n: u64, exponent: f64) -> Self {
        ZipfBase {
            dist: Zipf::new(n as f64, exponent).expect("valid zipf parameters"),
        }
    }

    pub fn sample(&self, rng: &mut impl RngCore) -> u64 {
        self.dist.sample(rng) as u64 - 1
    }
}

fn field_value(key: u64, f: u8) -> u64 {
    let mut x = key.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (f as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    x ^= x >> 29;
    x.wrapping_mul(0xbf58_476d_1ce4_e5b9) >> 1
}

struct Placement<'a> {
    map: &'a AddressMap,
    scopes: &'a [ScopeId],
    first_key: u64,
    /// Consecutive keys stored in each scope before moving to the next.
    per_scope: u64,
}

impl Placement<'_> {
    /// Scope and slot of the `i`-th key of the thread: each scope holds a
    /// contiguous key range.
    fn locate(&self, i: u64) -> (ScopeId, u32) {
        (self.scopes[(i / self.per_scope) as usize], (i % self.per_scope) as u32)
    }

    fn record_writes(&self, key: u64, i: u64, fields: u8) -> Vec<(PhysAddr, u64)> {
        let (s, slot) = self.locate(i);
        (0..fields)
            .map(|f| {
                let v = if f == 0 { key } else { field_value(key, f) };
                (self.map.field_addr(s, f, slot), v)
            })
            .collect()
    }
}

impl YcsbConfig {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if (self.scan_pct + self.insert_pct - 1.0).abs() > 1e-9 || self.scan_pct < 0.0 || self.insert_pct < 0.0 {
            return Err(invalid("scan_pct", "scan_pct and insert_pct must be non-negative and sum to 1"));
        }
        if self.n_threads == 0 {
            return Err(invalid("n_threads", "must be at least 1"));
        }
        if self.n_scopes < self.n_threads as u32 {
            return Err(invalid("n_scopes", "every thread needs at least one scope"));
        }
        if self.fields_per_record < 2 || self.fields_per_record > MAX_FIELDS {
            return Err(invalid("fields_per_record", format!("must be in 2..={MAX_FIELDS}")));
        }
        if self.field_len_bytes == 0 {
            return Err(invalid("field_len_bytes", "must be positive"));
        }
        if self.scan_len_min == 0 || self.scan_len_min > self.scan_len_max {
            return Err(invalid("scan_len_min", "scan lengths must satisfy 1 <= min <= max"));
        }
        if self.zipf_exponent <= 0.0 {
            return Err(invalid("zipf_exponent", "must be positive"));
        }
        let per_thread = self.n_records / self.n_threads as u64;
        if per_thread < self.scan_len_max {
            return Err(invalid(
                "n_records",
                format!("{per_thread} records per thread cannot hold a scan of {}", self.scan_len_max),
            ));
        }
        Ok(())
    }

    pub fn generate(&self, map: &AddressMap) -> Result<Logical, WorkloadError> {
        self.validate()?;
        let nt = self.n_threads as u64;
        let per_thread = self.n_records / nt;
        let assign = thread_scopes(self.n_scopes, self.n_threads);
        let mut image = Memory::default();
        for scopes in &assign {
            for &s in scopes {
                for slot in 0..map.slots_per_scope {
                    image.write_word(map.field_addr(s, 0, slot), u64::MAX);
                }
            }
        }

        let mut mix = RngStream::new(self.seed, "ycsb:mix");
        let n_scans = Binomial::new(self.n_ops, self.scan_pct)
            .expect("validated probability")
            .sample(mix.rng_mut());
        let mut kinds: Vec<bool> = (0..self.n_ops).map(|i| i < n_scans).collect();
        kinds.shuffle(mix.rng_mut());

        let mut per_scope = Vec::new();
        for (t, scopes) in assign.iter().enumerate() {
            let inserts = kinds.iter().enumerate().filter(|&(i, &k)| !k && i as u64 % nt == t as u64).count() as u64;
            let slots = (per_thread + inserts).div_ceil(scopes.len() as u64);
            if slots > map.slots_per_scope as u64 {
                return Err(invalid(
                    "n_records",
                    format!("thread {t} needs {slots} record slots per scope, a scope has {}", map.slots_per_scope),
                ));
            }
            per_scope.push(slots);
        }

        let mut threads = Vec::new();
        for (t, scopes) in assign.iter().enumerate() {
            let place = Placement {
                map,
                scopes,
                first_key: t as u64 * per_thread,
                per_scope: per_scope[t],
            };
            for i in 0..per_thread {
                for (a, v) in place.record_writes(place.first_key + i, i, self.fields_per_record) {
                    image.write_word(a, v);
                }
            }
            let mut rng = RngStream::new(self.seed, &format!("ycsb:thread{t}"));
            let mut ops = Vec::new();
            let mut inserted = 0u64;
            for (i, &is_scan) in kinds.iter().enumerate() {
                if i as u64 % nt != t as u64 {
                    continue;
                }
                if is_scan {
                    ops.push(self.scan(&place, per_thread, rng.rng_mut()));
                } else {
                    let key = self.n_records + i as u64;
                    let writes = place.record_writes(key, per_thread + inserted, self.fields_per_record);
                    inserted += 1;
                    ops.push(LogicalOp::Insert { writes });
                }
            }
            threads.push(ops);
        }
        Ok(Logical { threads, image })
    }

    fn scan(&self, place: &Placement, per_thread: u64, rng: &mut impl RngCore) -> LogicalOp {
        let len = sample_scan_len(rng, self.scan_len_min, self.scan_len_max);
        let base = ZipfBase::new(per_thread - len + 1, self.zipf_exponent).sample(rng);
        let lo = place.first_key + base;
        let hi = lo + len;
        let field = rng.random_range(1..self.fields_per_record);
        let map = place.map;
        let ops = place
            .scopes
            .iter()
            .map(|&s| {
                (
                    s,
                    vec![
                        PimOpDescriptor::filter(s, PimOpcode::FilterLt, 0, hi, 0),
                        PimOpDescriptor::filter(s, PimOpcode::FilterLt, 0, lo, 1),
                        PimOpDescriptor::mask(s, PimOpcode::MaskNot, [1, 0], 2),
                        PimOpDescriptor::mask(s, PimOpcode::MaskAnd, [0, 2], 3),
                    ],
                )
            })
            .collect();
        let mut reads = Vec::new();
        for &s in place.scopes {
            reads.extend((0..map.mask_words()).map(|w| map.mask_word_addr(s, 3, w)));
        }
        for i in base..base + len {
            let (s, slot) = place.locate(i);
            reads.push(map.field_addr(s, field, slot));
        }
        LogicalOp::Scan { ops, reads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::RngStream;

    fn map() -> AddressMap {
        AddressMap::new(0x4000_0000, 2 << 20, 16, 1024).unwrap()
    }

    #[test]
    fn default_mix_has_exactly_n_ops() {
        let l = YcsbConfig::default().generate(&map()).unwrap();
        let ops: Vec<&LogicalOp> = l.threads.iter().flatten().collect();
        assert_eq!(ops.len(), 1000);
        let scans = ops.iter().filter(|o| matches!(o, LogicalOp::Scan { .. })).count();
        assert!((900..=990).contains(&scans), "{scans} scans");
    }

    #[test]
    fn same_seed_same_workload() {
        let a = YcsbConfig::default().generate(&map()).unwrap();
        let b = YcsbConfig::default().generate(&map()).unwrap();
        assert_eq!(a.threads, b.threads);
        let c = YcsbConfig {
            seed: 2,
            ..YcsbConfig::default()
        }
        .generate(&map())
        .unwrap();
        assert_ne!(a.threads, c.threads);
    }

    #[test]
    fn scan_lengths_are_uniform() {
        let mut rng = RngStream::new(3, "t");
        let n = 20_000;
        let mut hist = [0u64; 100];
        for _ in 0..n {
            hist[sample_scan_len(rng.rng_mut(), 1, 100) as usize - 1] += 1;
        }
        let e = n as f64 / 100.0;
        let chi2: f64 = hist.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
        // 99.9th percentile of chi-square with 99 degrees of freedom.
        assert!(chi2 < 148.2, "chi2 = {chi2}");
    }

    #[test]
    fn zipf_frequencies_follow_the_power_law() {
        let z = ZipfBase::new(1000, 0.99);
        let mut rng = RngStream::new(9, "z");
        let n = 200_000;
        let mut counts = [0u64; 4];
        for _ in 0..n {
            let r = z.sample(rng.rng_mut());
            if r < 4 {
                counts[r as usize] += 1;
            }
        }
        let h: f64 = (1..=1000).map(|k| 1.0 / (k as f64).powf(0.99)).sum();
        for (k, &c) in counts.iter().enumerate() {
            let p = 1.0 / ((k + 1) as f64).powf(0.99) / h;
            let got = c as f64 / n as f64;
            assert!((got - p).abs() < 0.1 * p, "rank {}: {got} vs {p}", k + 1);
        }
    }

    #[test]
    fn rejects_an_inconsistent_mix() {
        let c = YcsbConfig {
            scan_pct: 0.5,
            ..YcsbConfig::default()
        };
        assert!(matches!(c.generate(&map()), Err(WorkloadError::Invalid { .. })));
        let c = YcsbConfig {
            n_records: 1 << 20,
            ..YcsbConfig::default()
        };
        assert!(c.generate(&map()).is_err());
    }
}
