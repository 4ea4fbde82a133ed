use thiserror::Error;

use super::{validate_tree, ArgumentTreeNode, Violation};
use crate::config::{ConfigDocument, KeyForm};
use crate::schema::Value;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("tree has {} violation(s); the first is: {}", .0.len(), .0[0])]
pub struct InvalidTree(pub Vec<Violation>);

/// The canonical config for a valid tree: every argument of every node
/// appears once under its indexed wildcard key, nothing else is emitted.
pub fn generate_config(root: &ArgumentTreeNode) -> Result<ConfigDocument, InvalidTree> {
    let violations = validate_tree(root);
    if !violations.is_empty() {
        return Err(InvalidTree(violations));
    }
    Ok(emit_config(root))
}

/// Emits the config for `root` without validating it first. The root is
/// always written at index 0 so a subtree can be re-read on its own.
pub fn emit_config(root: &ArgumentTreeNode) -> ConfigDocument {
    let mut entries = Vec::new();
    entries.push((
        root.req_key.clone(),
        Value::Str(root.descriptor.name.clone()),
    ));
    emit_node(root, &root.req_key, 0, &mut entries);
    let mut doc = ConfigDocument::new();
    for (key, value) in entries {
        // keys are built from validated identifiers
        doc.insert(key, value)
            .expect("generated key is well-formed");
    }
    doc
}

fn emit_node(node: &ArgumentTreeNode, req_key: &str, index: usize, out: &mut Vec<(String, Value)>) {
    for spec in &node.descriptor.arguments {
        if let Some(value) = node.values.get(&spec.name) {
            out.push((KeyForm::indexed(req_key, index, &spec.name), value.clone()));
        }
    }
    for req in &node.descriptor.child_requirements {
        let kids = node.children_of(&req.key);
        let names: Vec<&str> = kids.iter().map(|k| k.descriptor.name.as_str()).collect();
        out.push((req.key.clone(), Value::Str(names.join(", "))));
        for (i, kid) in kids.iter().enumerate() {
            emit_node(kid, &req.key, i, out);
        }
    }
}
