use std::collections::HashMap;

use super::{format_path, ArgumentTreeNode, PathStep, Violation, ViolationCode};
use crate::schema::{coerce_value, tags_match, ChildRequirementSpec};

/// Every invariant breach in the tree, in depth-first order. An empty result
/// means the tree can be turned into a config and run.
pub fn validate_tree(root: &ArgumentTreeNode) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut owners: HashMap<&str, String> =
        HashMap::from([(root.req_key.as_str(), "the entry point".to_string())]);
    let mut path = Vec::new();
    check_node(root, &mut path, &mut owners, &mut out);
    out
}

/// Count, kind and tag breaches of one requirement of `node`.
pub fn requirement_violations(
    node: &ArgumentTreeNode,
    req: &ChildRequirementSpec,
    path: &[PathStep],
) -> Vec<Violation> {
    let mut out = Vec::new();
    let kids = node.children_of(&req.key);
    if !req.accepts_count(kids.len()) {
        let detail = format!(
            "{} requires {}, found {}",
            req.key,
            req.describe_count(),
            kids.len()
        );
        out.push(Violation::new(ViolationCode::CountViolation, path, detail));
    }
    for (i, kid) in kids.iter().enumerate() {
        let mut kid_path = path.to_vec();
        kid_path.push((req.key.clone(), i));
        let d = &kid.descriptor;
        if d.kind != req.allowed_kind {
            let detail = format!(
                "'{}' is of kind '{}', {} expects '{}'",
                d.name, d.kind, req.key, req.allowed_kind
            );
            out.push(Violation::new(
                ViolationCode::KindMismatch,
                &kid_path,
                detail,
            ));
        } else if !tags_match(&d.tags, &req.tag_filter) {
            let detail = format!("'{}' lacks the tags required by {}", d.name, req.key);
            out.push(Violation::new(
                ViolationCode::TagMismatch,
                &kid_path,
                detail,
            ));
        }
    }
    out
}

fn check_node<'t>(
    node: &'t ArgumentTreeNode,
    path: &mut Vec<PathStep>,
    owners: &mut HashMap<&'t str, String>,
    out: &mut Vec<Violation>,
) {
    let d = &node.descriptor;
    for spec in &d.arguments {
        match node.values.get(&spec.name) {
            None => out.push(Violation::new(
                ViolationCode::CoercionError,
                path,
                format!("no value for argument '{}'", spec.name),
            )),
            Some(v) => match coerce_value(spec, v) {
                Ok(ref typed) if typed == v => {}
                Ok(_) => out.push(Violation::new(
                    ViolationCode::CoercionError,
                    path,
                    format!(
                        "argument '{}' holds {v:?}, not a {}",
                        spec.name, spec.value_kind
                    ),
                )),
                Err(e) => out.push(Violation::new(
                    ViolationCode::CoercionError,
                    path,
                    e.to_string(),
                )),
            },
        }
    }
    for name in node.values.keys() {
        if d.argument(name).is_none() {
            out.push(Violation::new(
                ViolationCode::CoercionError,
                path,
                format!("'{}' has no argument '{name}'", d.name),
            ));
        }
    }
    for key in node.children.keys() {
        if d.requirement(key).is_none() {
            out.push(Violation::new(
                ViolationCode::KindMismatch,
                path,
                format!("'{}' does not declare requirement '{key}'", d.name),
            ));
        }
    }

    for req in &d.child_requirements {
        if let Some(owner) = owners.get(req.key.as_str()) {
            let detail = format!("'{}' of {} is already used by {owner}", req.key, d.name);
            out.push(Violation::new(
                ViolationCode::DuplicateRequirementKey,
                path,
                detail,
            ));
        } else {
            owners.insert(&req.key, format!("{} at {}", d.name, format_path(path)));
        }
        out.extend(requirement_violations(node, req, path));
    }

    for (key, kids) in &node.children {
        for (i, kid) in kids.iter().enumerate() {
            path.push((key.clone(), i));
            check_node(kid, path, owners, out);
            path.pop();
        }
    }
}
