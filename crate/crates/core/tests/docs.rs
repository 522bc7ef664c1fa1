//! The model documentation and the litmus corpus stay in lockstep.

use pimsim::litmus::builtin_names;

const MODELS_DOC: &str = include_str!("../../../docs/models.md");

fn backticked(line: &str) -> Vec<&str> {
    line.split('`').skip(1).step_by(2).collect()
}

#[test]
fn every_rule_names_an_existing_litmus_test() {
    let names = builtin_names();
    let mut section = "";
    for line in MODELS_DOC.lines() {
        if let Some(h) = line.strip_prefix("## ") {
            section = h;
        }
        if !line.starts_with("- ") || section.starts_with("Where") {
            continue;
        }
        let tests: Vec<&str> = backticked(line).into_iter().filter(|t| names.iter().any(|n| n == t)).collect();
        // Uncacheable is a caching toggle with no ordering rule of its own.
        if line.starts_with("- `uncacheable`") {
            continue;
        }
        assert!(!tests.is_empty(), "rule without a litmus test in {section}: {line}");
    }
}

#[test]
fn every_builtin_test_is_documented() {
    let named: Vec<&str> = MODELS_DOC.lines().flat_map(backticked).collect();
    for n in builtin_names() {
        assert!(named.contains(&n.as_str()), "{n} is not referenced by any documented rule");
    }
}
