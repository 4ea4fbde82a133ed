use std::fmt::Write;

use crate::registry::Registry;
use crate::schema::Tags;

fn format_tags(tags: &Tags) -> String {
    if tags.is_empty() {
        return "-".to_string();
    }
    tags.iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Exhaustive plain-text listing of the registry: modules grouped by kind,
/// every argument and requirement, then any missing modules.
pub fn docgen(registry: &Registry) -> String {
    let missing: Vec<(&str, &str)> = registry.missing().collect();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Module registry: {} module(s) in {} kind(s), {} missing",
        registry.len(),
        registry.kinds().len(),
        missing.len()
    );

    for kind in registry.kinds() {
        let _ = writeln!(out, "\n== {kind} ==");
        for d in registry.iter().filter(|d| d.kind == kind) {
            let _ = writeln!(out, "\nModule: {}", d.name);
            if !d.help.is_empty() {
                let _ = writeln!(out, "  help: {}", d.help);
            }
            if !d.source.is_empty() {
                let _ = writeln!(out, "  source: {}", d.source);
            }
            let _ = writeln!(out, "  tags: {}", format_tags(&d.tags));
            for a in &d.arguments {
                let _ = write!(
                    out,
                    "  Argument: {} ({}, default {})",
                    a.name,
                    a.value_kind,
                    a.default.to_json()
                );
                if !a.choices.is_empty() {
                    let _ = write!(out, " one of [{}]", a.choices.join(", "));
                }
                let _ = writeln!(out, "  {}", a.help);
            }
            for r in &d.child_requirements {
                let _ = writeln!(
                    out,
                    "  Requirement: {} (kind {}, tags {}, count {})",
                    r.key,
                    r.allowed_kind,
                    format_tags(&r.tag_filter),
                    r.bounds()
                );
            }
        }
    }

    if !missing.is_empty() {
        out.push_str("\n== MISSING ==\n");
        for (name, reason) in missing {
            let _ = writeln!(out, "Missing: {name}: {reason}");
        }
    }
    out
}
