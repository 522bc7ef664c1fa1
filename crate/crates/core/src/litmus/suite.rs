//! The built-in suite, compiled in from the corpus directory.

use super::LitmusTest;

/// `(file name, text)` of every corpus test.
pub const CORPUS: [(&str, &str); 11] = [
    ("sb.litmus", include_str!("../../litmus/sb.litmus")),
    ("sb-fences.litmus", include_str!("../../litmus/sb-fences.litmus")),
    ("mp.litmus", include_str!("../../litmus/mp.litmus")),
    ("fig1-cycle.litmus", include_str!("../../litmus/fig1-cycle.litmus")),
    ("pim-same-scope-load.litmus", include_str!("../../litmus/pim-same-scope-load.litmus")),
    (
        "pim-same-scope-scopefence.litmus",
        include_str!("../../litmus/pim-same-scope-scopefence.litmus"),
    ),
    ("pim-other-scope-load.litmus", include_str!("../../litmus/pim-other-scope-load.litmus")),
    ("pim-cross-scope.litmus", include_str!("../../litmus/pim-cross-scope.litmus")),
    (
        "pim-cross-scope-pimfence.litmus",
        include_str!("../../litmus/pim-cross-scope-pimfence.litmus"),
    ),
    ("pimfence-orders-stores.litmus", include_str!("../../litmus/pimfence-orders-stores.litmus")),
    ("pimfence-pim-only.litmus", include_str!("../../litmus/pimfence-pim-only.litmus")),
];

pub fn builtin() -> Vec<LitmusTest> {
    CORPUS
        .iter()
        .map(|(f, text)| LitmusTest::parse(text).unwrap_or_else(|e| panic!("corpus file {f}: {e}")))
        .collect()
}

pub fn builtin_names() -> Vec<String> {
    builtin().into_iter().map(|t| t.name).collect()
}

pub fn builtin_test(name: &str) -> Option<LitmusTest> {
    builtin().into_iter().find(|t| t.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_corpus_file_parses_with_a_unique_name() {
        let mut names = builtin_names();
        assert_eq!(names.len(), CORPUS.len());
        names.sort();
        names.dedup();
        assert_eq!(names.len(), CORPUS.len());
    }
}
