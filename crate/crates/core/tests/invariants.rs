//! Randomized end-to-end properties: every configuration keeps the
//! runtime invariants, agrees with the sequential oracle and is
//! reproducible from its seed.

use proptest::prelude::*;

use pimsim::config::{Configuration, Model, SimConfig};
use pimsim::engine::Chooser;
use pimsim::program::{Symbols, ThreadProgram};
use pimsim::runner::run_workload;
use pimsim::sim::{Job, System};
use pimsim::workloads::{QueryKind, QueryTemplate, WorkloadSpec, YcsbConfig};

fn configuration() -> impl Strategy<Value = Configuration> {
    prop::sample::select(Configuration::six().into_iter().chain([Configuration::UNCACHEABLE]).collect::<Vec<_>>())
}

fn ycsb() -> impl Strategy<Value = WorkloadSpec> {
    (1u32..=8, 1usize..=4, 4u64..40, 0.0f64..=1.0, any::<u64>()).prop_map(|(scopes, threads, ops, scan, seed)| {
        WorkloadSpec::Ycsb(YcsbConfig {
            n_ops: ops,
            scan_pct: scan,
            insert_pct: 1.0 - scan,
            n_records: 64 * scopes as u64,
            scan_len_max: 32,
            n_threads: threads.min(scopes as usize),
            n_scopes: scopes,
            seed,
            ..YcsbConfig::default()
        })
    })
}

fn query() -> impl Strategy<Value = WorkloadSpec> {
    (any::<bool>(), 1u32..=6, 1u32..=7, 0.0f64..=1.0, any::<u64>()).prop_map(|(full, scopes, ops, sel, seed)| {
        WorkloadSpec::Query(QueryTemplate {
            query: if full { QueryKind::FullQuery } else { QueryKind::FilterOnly },
            n_scopes: scopes,
            pim_ops_per_scope: ops,
            selectivity: sel,
            repetitions: 2,
            n_threads: 1,
            seed,
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn workloads_keep_invariants_and_match_the_oracle(
        spec in prop_oneof![ycsb(), query()],
        c in configuration(),
        seed in any::<u64>(),
    ) {
        let mut cfg = SimConfig::default();
        cfg.set_configuration(c);
        cfg.seed = seed;
        cfg.invariant_interval = 500;
        let a = run_workload(&cfg, &spec).unwrap();
        prop_assert!(a.outcome.violations.is_empty(), "{:?}", a.outcome.violations);
        if c.model == Model::Naive && !c.uncacheable {
            prop_assert_eq!(a.report.oracle_match, None);
        } else {
            prop_assert_eq!(a.report.oracle_match, Some(true));
        }
        let b = run_workload(&cfg, &spec).unwrap();
        prop_assert_eq!(a.report, b.report);
        prop_assert_eq!(a.outcome.trace_digest, b.outcome.trace_digest);
    }

    /// Threads on private addresses always read their own latest store,
    /// whatever the model and network timing.
    #[test]
    fn private_accesses_read_the_latest_own_store(
        progs in prop::collection::vec(prop::collection::vec((any::<bool>(), 0usize..4, 1u64..100), 1..12), 1..=3),
        c in configuration(),
        seed in any::<u64>(),
    ) {
        let mut syms = Symbols::default();
        for t in 0..3 {
            for a in 0..4 {
                syms.insert(&format!("X{t}_{a}"), 0x1000 + 0x1000 * t as u64 + 0x40 * a as u64);
            }
        }
        let mut expected = Vec::new();
        let mut programs = Vec::new();
        for (t, ops) in progs.iter().enumerate() {
            let mut mem = [0u64; 4];
            let mut regs = std::collections::BTreeMap::new();
            let mut lines = Vec::new();
            for (i, &(is_store, a, v)) in ops.iter().enumerate() {
                if is_store {
                    lines.push(format!("st X{t}_{a} {v}"));
                    mem[a] = v;
                } else {
                    let r = (i % 8) as u8;
                    lines.push(format!("ld X{t}_{a} r{r}"));
                    regs.insert(r, mem[a]);
                }
            }
            programs.push(ThreadProgram::parse(&lines.join("\n"), &syms).unwrap());
            expected.push(regs);
        }
        let mut cfg = SimConfig::litmus(programs.len() as u16);
        cfg.set_configuration(c);
        let job = Job { programs, ..Job::default() };
        let out = System::new(cfg, job, Chooser::random(seed)).unwrap().run().unwrap();
        prop_assert!(out.violations.is_empty(), "{:?}", out.violations);
        for (t, regs) in expected.iter().enumerate() {
            for (r, v) in regs {
                prop_assert_eq!(out.registers[t].get(r), Some(v), "thread {} r{}", t, r);
            }
        }
    }
}
