//! Fixtures shared by the benchmarks.

use std::path::Path;

use argtree_core::testkit::{random_case, RandomCase};
use argtree_core::{generate_config, ConfigDocument};

/// A golden config from the core test suite.
pub fn golden_config(name: &str) -> ConfigDocument {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/golden")
        .join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    ConfigDocument::parse(&text).expect("golden configs parse")
}

/// The deepest, largest random case among the first `tries` seeds, with its
/// canonical config.
pub fn large_case(tries: u64) -> (RandomCase, ConfigDocument) {
    let case = (0..tries)
        .map(|seed| random_case(seed, 6))
        .max_by_key(|c| c.tree.node_count())
        .expect("at least one try");
    let doc = generate_config(&case.tree).expect("random cases are valid");
    (case, doc)
}
