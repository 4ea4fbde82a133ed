#![allow(dead_code)]

use std::path::{Path, PathBuf};

use argtree_core::config::default_placeholders;
use argtree_core::demo::build_demo_registry_with;
use argtree_core::schema::Value;
use argtree_core::{
    build_tree, ArgumentTreeNode, BuildError, ConfigDocument, EntryPoint, Registry,
};

pub const GOLDEN_CONFIGS: [&str; 6] = [
    "single_search.json",
    "gradient_descent.json",
    "random_search.json",
    "scheduled.json",
    "evaluation.json",
    "extras.json",
];

pub const GOLDEN_STATES: [&str; 3] = [
    "cell_3.state.json",
    "supernet.state.json",
    "supernet.final.state.json",
];

pub fn golden_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("golden")
        .join(name)
}

pub fn golden(name: &str) -> String {
    std::fs::read_to_string(golden_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn doc(name: &str) -> ConfigDocument {
    ConfigDocument::parse(&golden(name)).unwrap()
}

pub fn registry() -> Registry {
    build_demo_registry_with(false)
}

pub fn registry_with_extras() -> Registry {
    build_demo_registry_with(true)
}

pub fn build(registry: &Registry, doc: &ConfigDocument) -> Result<ArgumentTreeNode, BuildError> {
    build_tree(
        registry,
        doc,
        &default_placeholders(),
        &EntryPoint::default(),
    )
}

/// Golden config with extra entries set, e.g. a private save dir.
pub fn doc_with(name: &str, overrides: &[(&str, Value)]) -> ConfigDocument {
    let overrides: Vec<(String, Value)> = overrides
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect();
    doc(name).merge_overrides(&overrides).unwrap()
}

pub fn save_dir_override(dir: &Path) -> (&'static str, Value) {
    ("{cls_task}.save_dir", Value::Str(dir.display().to_string()))
}
