mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::{mp, registers_only, sb, tso_outcomes, Op, Outcome};
use pimsim::config::{Configuration, Model};
use pimsim::exec::Exec;
use pimsim::litmus::{builtin, builtin_names, explore, verdict, ExploreMode, LitmusTest, CORPUS};

fn outcome(pairs: &[(&str, u64)]) -> Outcome {
    pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect()
}

#[test]
fn enumerator_matches_textbook_sets() {
    let sb = tso_outcomes(&sb());
    assert_eq!(sb.len(), 4);
    assert!(sb.contains(&outcome(&[("0:r0", 0), ("1:r1", 0)])));
    let mp = tso_outcomes(&mp());
    assert_eq!(mp.len(), 3);
    assert!(!mp.contains(&outcome(&[("1:r0", 1), ("1:r1", 0)])));
    assert_eq!(tso_outcomes(&sb_fenced()).len(), 3);
}

fn exhaustive() -> ExploreMode {
    ExploreMode::Exhaustive {
        depth_bound: 14,
        max_runs: 200_000,
    }
}

fn register_outcomes(t: &LitmusTest, c: Configuration) -> BTreeSet<Outcome> {
    let set = explore(t, c, exhaustive(), Exec::from_env());
    assert!(set.violations.is_empty() && set.errors.is_empty(), "{} under {c}", t.name);
    set.outcomes.values().map(|o| registers_only(&o.valuation)).collect()
}

#[test]
fn every_builtin_verdict_passes() {
    for t in builtin() {
        for c in Configuration::six() {
            let v = verdict(&explore(&t, c, exhaustive(), Exec::from_env()), &t);
            assert!(v.pass, "{} under {c}: {:?}", t.name, v.conditions);
        }
    }
}

#[test]
fn corpus_files_parse_and_name_themselves() {
    assert_eq!(CORPUS.len(), builtin_names().len());
    for (_, text) in CORPUS {
        let t = LitmusTest::parse(text).unwrap();
        assert!(builtin_names().contains(&t.name));
    }
}

/// Each model only relaxes the one before it, so anything a stronger model
/// produces a weaker one should produce too. Exploration only branches on
/// network jitter, so when scope-relaxed drops a wait the outcomes that need
/// that wait can become unreachable; those tests are listed explicitly.
#[test]
fn weaker_models_admit_every_stronger_outcome() {
    const TIMING_LOST: [&str; 3] = ["fig1-cycle", "pim-same-scope-load", "pimfence-pim-only"];
    let mut lost = Vec::new();
    for t in builtin() {
        let sets: BTreeMap<Model, BTreeSet<Outcome>> = Model::MODELS
            .iter()
            .map(|&m| (m, register_outcomes(&t, Configuration::of(m))))
            .collect();
        for w in Model::MODELS.windows(2) {
            let (strong, weak) = (&sets[&w[0]], &sets[&w[1]]);
            if strong.is_subset(weak) {
                continue;
            }
            assert_eq!((w[0], w[1]), (Model::Scope, Model::ScopeRelaxed), "{}", t.name);
            lost.push(t.name.clone());
        }
    }
    assert_eq!(lost, TIMING_LOST);
}

fn sb_fenced() -> Vec<Vec<Op>> {
    vec![
        vec![Op::St("X", 1), Op::Fence, Op::Ld("Y", 0)],
        vec![Op::St("Y", 1), Op::Fence, Op::Ld("X", 1)],
    ]
}

#[test]
fn host_only_tests_match_the_reference_everywhere() {
    for (name, reference) in [("SB", sb()), ("SB+fences", sb_fenced()), ("MP", mp())] {
        let test = builtin().into_iter().find(|t| t.name == name).unwrap();
        let want = tso_outcomes(&reference);
        for c in Configuration::six().into_iter().chain([Configuration::UNCACHEABLE]) {
            assert_eq!(register_outcomes(&test, c), want, "{name} under {c}");
        }
    }
}

#[test]
fn random_mode_finds_a_subset_of_exhaustive() {
    let mp = builtin().into_iter().find(|t| t.name == "MP").unwrap();
    let c = Configuration::of(Model::Scope);
    let all = register_outcomes(&mp, c);
    let rnd = explore(&mp, c, ExploreMode::Random { trials: 300, seed: 5 }, Exec::Sequential);
    let got: BTreeSet<_> = rnd.outcomes.values().map(|o| registers_only(&o.valuation)).collect();
    assert!(got.is_subset(&all) && !got.is_empty());
    assert_eq!(rnd.runs, 300);
}

#[test]
fn fenced_store_buffering_is_sequentially_consistent() {
    assert!(!tso_outcomes(&sb_fenced()).contains(&outcome(&[("0:r0", 0), ("1:r1", 0)])));
}
