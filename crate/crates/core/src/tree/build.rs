use std::collections::HashMap;
use std::sync::Arc;

use indexmap::IndexMap;

use super::{format_path, ArgumentTreeNode, BuildError, PathStep, Violation, ViolationCode};
use crate::config::{expand_placeholders, ConfigDocument, Placeholders, ResolveError};
use crate::registry::{LookupError, Registry};
use crate::schema::{tags_match, ModuleDescriptor, Value, ValueKind};

/// The requirement that selects the root module, `cls_task`/`task` by default.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryPoint {
    pub req_key: String,
    pub kind: String,
}

impl EntryPoint {
    pub fn new(req_key: impl Into<String>, kind: impl Into<String>) -> Self {
        EntryPoint {
            req_key: req_key.into(),
            kind: kind.into(),
        }
    }
}

impl Default for EntryPoint {
    fn default() -> Self {
        EntryPoint::new("cls_task", "task")
    }
}

/// Builds the argument tree selected by `doc`, failing with every violation
/// found if the configuration is not exactly right.
pub fn build_tree(
    registry: &Registry,
    doc: &ConfigDocument,
    env: &Placeholders,
    entry: &EntryPoint,
) -> Result<ArgumentTreeNode, BuildError> {
    match build_tree_lenient(registry, doc, env, entry) {
        (Some(root), violations) if violations.is_empty() => Ok(root),
        (_, violations) => Err(BuildError { violations }),
    }
}

/// Like [`build_tree`], but returns whatever tree could be assembled next to
/// the violations. Used for loading partial trees into an editor.
pub fn build_tree_lenient(
    registry: &Registry,
    doc: &ConfigDocument,
    env: &Placeholders,
    entry: &EntryPoint,
) -> (Option<ArgumentTreeNode>, Vec<Violation>) {
    let mut doc = doc.clone();
    doc.reset_consumed();
    let mut b = Builder {
        registry,
        doc,
        env,
        violations: Vec::new(),
        owners: HashMap::from([(entry.req_key.clone(), "the entry point".to_string())]),
        unresolved: false,
    };

    let names = b.doc.get_used_classes(&entry.req_key);
    if names.len() != 1 {
        b.push(
            ViolationCode::CountViolation,
            &[],
            format!(
                "{} requires exactly 1, found {}",
                entry.req_key,
                names.len()
            ),
        );
    }
    let Some(name) = names.first() else {
        return (None, b.violations);
    };
    let descriptor = match registry.lookup(name) {
        Ok(d) => Arc::clone(d),
        Err(e) => {
            b.lookup_failed(&e, &entry.req_key, 0, &[]);
            return (None, b.violations);
        }
    };
    if descriptor.kind != entry.kind {
        b.push(
            ViolationCode::KindMismatch,
            &[],
            format!(
                "'{}' is of kind '{}', expected '{}'",
                descriptor.name, descriptor.kind, entry.kind
            ),
        );
    }

    let root = b.parse(&descriptor, &entry.req_key, 0, &mut Vec::new());

    // Keys meant for an unresolvable module cannot be attributed, so the
    // completeness check only runs when every selected class was found.
    if !b.unresolved {
        let unparsed: Vec<String> = b.doc.unconsumed().into_iter().map(str::to_string).collect();
        for key in unparsed {
            b.push(ViolationCode::UnparsedKey, &[], key);
        }
    }
    (Some(root), b.violations)
}

struct Builder<'a> {
    registry: &'a Registry,
    doc: ConfigDocument,
    env: &'a Placeholders,
    violations: Vec<Violation>,
    /// Requirement key -> who declared it first.
    owners: HashMap<String, String>,
    unresolved: bool,
}

impl Builder<'_> {
    fn push(&mut self, code: ViolationCode, path: &[PathStep], detail: impl Into<String>) {
        self.violations.push(Violation::new(code, path, detail));
    }

    fn lookup_failed(&mut self, err: &LookupError, req_key: &str, index: usize, path: &[PathStep]) {
        self.unresolved = true;
        let code = match err {
            LookupError::UnknownModule(_) => ViolationCode::UnknownModule,
            LookupError::MissingModule { .. } => ViolationCode::MissingModule,
        };
        self.push(code, path, format!("{req_key}#{index}: {err}"));
    }

    fn resolve_error(&mut self, err: ResolveError, path: &[PathStep]) {
        let code = match err {
            ResolveError::AmbiguousValue(_) => ViolationCode::AmbiguousValue,
            ResolveError::Coercion(_) => ViolationCode::CoercionError,
            ResolveError::UnknownPlaceholder(_) => ViolationCode::UnknownPlaceholder,
        };
        self.push(code, path, err.to_string());
    }

    fn parse(
        &mut self,
        descriptor: &Arc<ModuleDescriptor>,
        req_key: &str,
        index: usize,
        path: &mut Vec<PathStep>,
    ) -> ArgumentTreeNode {
        let mut values = IndexMap::new();
        for spec in &descriptor.arguments {
            let mut value = match self
                .doc
                .get_used_value(req_key, index, &descriptor.name, spec)
            {
                Ok(v) => v,
                Err(e) => {
                    self.resolve_error(e, path);
                    spec.default_value()
                        .unwrap_or_else(|_| spec.default.clone())
                }
            };
            if let (ValueKind::String, Value::Str(s)) = (spec.value_kind, &value) {
                match expand_placeholders(s, self.env) {
                    Ok(expanded) => value = Value::Str(expanded),
                    Err(e) => self.resolve_error(e, path),
                }
            }
            values.insert(spec.name.clone(), value);
        }

        let mut children = IndexMap::new();
        for req in &descriptor.child_requirements {
            if let Some(owner) = self.owners.get(&req.key) {
                let detail = format!(
                    "'{}' of {} is already used by {owner}",
                    req.key, descriptor.name
                );
                self.push(ViolationCode::DuplicateRequirementKey, path, detail);
                children.insert(req.key.clone(), Vec::new());
                continue;
            }
            self.owners.insert(
                req.key.clone(),
                format!("{} at {}", descriptor.name, format_path(path)),
            );

            let names = self.doc.get_used_classes(&req.key);
            if !req.accepts_count(names.len()) {
                let detail = format!(
                    "{} requires {}, found {}",
                    req.key,
                    req.describe_count(),
                    names.len()
                );
                self.push(ViolationCode::CountViolation, path, detail);
            }

            let mut kids = Vec::with_capacity(names.len());
            for (i, name) in names.iter().enumerate() {
                let child = match self.registry.lookup(name) {
                    Ok(d) => Arc::clone(d),
                    Err(e) => {
                        self.lookup_failed(&e, &req.key, i, path);
                        continue;
                    }
                };
                path.push((req.key.clone(), i));
                if child.kind != req.allowed_kind {
                    let detail = format!(
                        "'{}' is of kind '{}', {} expects '{}'",
                        child.name, child.kind, req.key, req.allowed_kind
                    );
                    self.push(ViolationCode::KindMismatch, path, detail);
                } else if !tags_match(&child.tags, &req.tag_filter) {
                    let detail = format!("'{}' lacks the tags required by {}", child.name, req.key);
                    self.push(ViolationCode::TagMismatch, path, detail);
                }
                kids.push(self.parse(&child, &req.key, i, path));
                path.pop();
            }
            children.insert(req.key.clone(), kids);
        }

        ArgumentTreeNode {
            descriptor: Arc::clone(descriptor),
            req_key: req_key.to_string(),
            index,
            values,
            children,
        }
    }
}
