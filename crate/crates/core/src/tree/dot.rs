use std::fmt::Write;

use super::{requirement_violations, ArgumentTreeNode, PathStep};

fn escape(label: &str) -> String {
    label.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Renders the tree as a Graphviz digraph. Class nodes are filled boxes;
/// each requirement gets an intermediate node labeled `key (min..max)`,
/// drawn red when `include_violations` is set and the requirement is breached.
pub fn to_dot(root: &ArgumentTreeNode, include_violations: bool) -> String {
    let mut out = String::from("digraph argtree {\n");
    out.push_str("  node [fontname=\"Helvetica\", fontsize=10];\n");
    let mut counter = Counter::default();
    render(
        root,
        &mut Vec::new(),
        include_violations,
        &mut counter,
        &mut out,
    );
    out.push_str("}\n");
    out
}

#[derive(Default)]
struct Counter {
    classes: usize,
    requirements: usize,
}

fn render(
    node: &ArgumentTreeNode,
    path: &mut Vec<PathStep>,
    include_violations: bool,
    counter: &mut Counter,
    out: &mut String,
) -> String {
    let id = format!("c{}", counter.classes);
    counter.classes += 1;
    let _ = writeln!(
        out,
        "  {id} [shape=box, style=filled, fillcolor=turquoise, label=\"{}\"];",
        escape(&node.descriptor.name)
    );

    for req in &node.descriptor.child_requirements {
        let rid = format!("r{}", counter.requirements);
        counter.requirements += 1;
        let broken = include_violations && !requirement_violations(node, req, path).is_empty();
        let color = if broken {
            ", color=red, fontcolor=red"
        } else {
            ""
        };
        let _ = writeln!(
            out,
            "  {rid} [shape=box, style=rounded, label=\"{} ({})\"{color}];",
            escape(&req.key),
            req.bounds()
        );
        let _ = writeln!(out, "  {id} -> {rid};");
        for (i, kid) in node.children_of(&req.key).iter().enumerate() {
            path.push((req.key.clone(), i));
            let kid_id = render(kid, path, include_violations, counter, out);
            path.pop();
            let _ = writeln!(out, "  {rid} -> {kid_id};");
        }
    }
    id
}
