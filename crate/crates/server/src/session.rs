//! One editing session: an argument tree that may violate its schema, plus
//! the mutations an editor is allowed to make to it.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use argtree_core::config::{expand_placeholders, ConfigError};
use argtree_core::schema::{coerce_value, tags_match, ValueKind};
use argtree_core::tree::{emit_config, PathStep};
use argtree_core::{
    build_tree_lenient, generate_config, validate_tree, ArgumentTreeNode, ChildRequirementSpec,
    ConfigDocument, EntryPoint, LookupError, ModuleDescriptor, Placeholders, Registry, Value,
    Violation, ViolationCode,
};

pub const ROOT_NAME: &str = "Main";
pub const ROOT_REQ_KEY: &str = "main";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("{0}")]
    NotFound(String),
    #[error("{message}")]
    Conflict {
        message: String,
        violations: Vec<Violation>,
    },
    #[error("{message}")]
    Unprocessable {
        message: String,
        violations: Vec<Violation>,
    },
    #[error("{0}")]
    BadRequest(String),
    #[error("stale revision: expected {expected}, session is at {actual}")]
    Stale { expected: u64, actual: u64 },
}

impl SessionError {
    fn conflict(violations: Vec<Violation>) -> Self {
        let message = violations
            .first()
            .map(ToString::to_string)
            .unwrap_or_else(|| "conflict".into());
        SessionError::Conflict {
            message,
            violations,
        }
    }

    fn unprocessable(violations: Vec<Violation>) -> Self {
        let message = violations
            .first()
            .map(ToString::to_string)
            .unwrap_or_else(|| "invalid value".into());
        SessionError::Unprocessable {
            message,
            violations,
        }
    }

    pub fn violations(&self) -> &[Violation] {
        match self {
            SessionError::Conflict { violations, .. }
            | SessionError::Unprocessable { violations, .. } => violations,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchField {
    ModuleName,
    ArgName,
    ArgValue,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchMatch {
    pub node_path: Vec<PathStep>,
    pub field: MatchField,
    pub matched_text: String,
}

/// What a successful mutation reports back.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub revision: u64,
    pub violations: Vec<Violation>,
    /// The node the mutation created or touched, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<Vec<PathStep>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
}

#[derive(Debug, Clone)]
pub struct EditorSession {
    registry: Arc<Registry>,
    env: Placeholders,
    entry: EntryPoint,
    root: Arc<ModuleDescriptor>,
    tree: ArgumentTreeNode,
    revision: u64,
    last_violations: Vec<Violation>,
}

impl EditorSession {
    pub fn new(registry: Arc<Registry>, env: Placeholders, entry: EntryPoint) -> Self {
        let root = Arc::new(
            ModuleDescriptor::new(ROOT_NAME, "main")
                .help("Editor root; holds the entry module.")
                .requires(ChildRequirementSpec::exactly_one(
                    &entry.req_key,
                    &entry.kind,
                )),
        );
        let tree = bare_root(&root);
        let last_violations = validate_tree(&tree);
        EditorSession {
            registry,
            env,
            entry,
            root,
            tree,
            revision: 0,
            last_violations,
        }
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn entry(&self) -> &EntryPoint {
        &self.entry
    }

    pub fn root_descriptor(&self) -> &ModuleDescriptor {
        &self.root
    }

    /// The whole tree, rooted at the synthetic `Main` node.
    pub fn tree(&self) -> &ArgumentTreeNode {
        &self.tree
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn violations(&self) -> &[Violation] {
        &self.last_violations
    }

    fn entry_path(&self) -> Vec<PathStep> {
        vec![(self.entry.req_key.clone(), 0)]
    }

    /// The entry module (the experiment), once one was added.
    pub fn entry_node(&self) -> Option<&ArgumentTreeNode> {
        self.tree.node_at(&self.entry_path())
    }

    pub fn check_revision(&self, expected: Option<u64>) -> Result<(), SessionError> {
        match expected {
            Some(expected) if expected != self.revision => Err(SessionError::Stale {
                expected,
                actual: self.revision,
            }),
            _ => Ok(()),
        }
    }

    fn commit(&mut self, tree: ArgumentTreeNode, violations: Vec<Violation>) -> u64 {
        self.tree = tree;
        self.last_violations = violations;
        self.revision += 1;
        self.revision
    }

    fn outcome(&self, path: Option<Vec<PathStep>>, value: Option<Value>) -> Outcome {
        Outcome {
            revision: self.revision,
            violations: self.last_violations.clone(),
            path,
            value,
        }
    }

    /// Rejects a candidate tree that declares a requirement key twice when
    /// the committed tree did not already do so.
    fn checked(
        &self,
        candidate: ArgumentTreeNode,
    ) -> Result<(ArgumentTreeNode, Vec<Violation>), SessionError> {
        let violations = validate_tree(&candidate);
        let count = |v: &[Violation]| {
            v.iter()
                .filter(|x| x.code == ViolationCode::DuplicateRequirementKey)
                .count()
        };
        if count(&violations) > count(&self.last_violations) {
            let dups = violations
                .into_iter()
                .filter(|x| x.code == ViolationCode::DuplicateRequirementKey)
                .collect();
            return Err(SessionError::conflict(dups));
        }
        Ok((candidate, violations))
    }

    fn node(&self, path: &[PathStep]) -> Result<&ArgumentTreeNode, SessionError> {
        self.tree
            .node_at(path)
            .ok_or_else(|| SessionError::NotFound(format!("no node at {}", describe(path))))
    }

    pub fn add_child(
        &mut self,
        path: &[PathStep],
        req_key: &str,
        class_name: &str,
    ) -> Result<Outcome, SessionError> {
        let parent = self.node(path)?;
        let req = parent.descriptor.requirement(req_key).ok_or_else(|| {
            SessionError::NotFound(format!(
                "'{}' at {} declares no requirement '{req_key}'",
                parent.name(),
                describe(path)
            ))
        })?;
        let index = parent.children_of(req_key).len();
        let mut child_path = path.to_vec();
        child_path.push((req_key.to_string(), index));

        let descriptor = match self.registry.lookup(class_name) {
            Ok(d) => Arc::clone(d),
            Err(e) => {
                let code = match e {
                    LookupError::UnknownModule(_) => ViolationCode::UnknownModule,
                    LookupError::MissingModule { .. } => ViolationCode::MissingModule,
                };
                let v = Violation::new(code, &child_path, e.to_string());
                return Err(SessionError::unprocessable(vec![v]));
            }
        };
        if descriptor.kind != req.allowed_kind {
            let detail = format!(
                "'{}' is of kind '{}', {req_key} expects '{}'",
                descriptor.name, descriptor.kind, req.allowed_kind
            );
            let v = Violation::new(ViolationCode::KindMismatch, &child_path, detail);
            return Err(SessionError::conflict(vec![v]));
        }
        if !tags_match(&descriptor.tags, &req.tag_filter) {
            let detail = format!("'{}' lacks the tags required by {req_key}", descriptor.name);
            let v = Violation::new(ViolationCode::TagMismatch, &child_path, detail);
            return Err(SessionError::conflict(vec![v]));
        }
        if req.count_max.is_some_and(|max| index >= max) {
            let detail = format!(
                "{req_key} requires {}, adding would make {}",
                req.describe_count(),
                index + 1
            );
            let v = Violation::new(ViolationCode::CountViolation, path, detail);
            return Err(SessionError::conflict(vec![v]));
        }

        let child = ArgumentTreeNode::with_defaults(descriptor, req_key, index, &self.env)
            .map_err(|e| {
                let v = Violation::new(ViolationCode::CoercionError, &child_path, e.to_string());
                SessionError::unprocessable(vec![v])
            })?;
        let mut tree = self.tree.clone();
        let parent = tree.node_at_mut(path).expect("path checked above");
        parent
            .children
            .entry(req_key.to_string())
            .or_default()
            .push(child);
        let (tree, violations) = self.checked(tree)?;
        self.commit(tree, violations);
        Ok(self.outcome(Some(child_path), None))
    }

    pub fn remove_child(&mut self, path: &[PathStep]) -> Result<Outcome, SessionError> {
        let Some(((key, index), parent_path)) = path.split_last() else {
            return Err(SessionError::BadRequest(
                "the root cannot be removed".into(),
            ));
        };
        self.node(path)?;
        let mut tree = self.tree.clone();
        let parent = tree.node_at_mut(parent_path).expect("child exists");
        parent
            .children
            .get_mut(key)
            .expect("child exists")
            .remove(*index);
        parent.renumber();
        let violations = validate_tree(&tree);
        self.commit(tree, violations);
        Ok(self.outcome(None, None))
    }

    /// Sets one argument from a raw scalar, coercing it to the declared kind.
    pub fn set_arg(
        &mut self,
        path: &[PathStep],
        arg: &str,
        raw: &Value,
    ) -> Result<Outcome, SessionError> {
        let node = self.node(path)?;
        let spec = node.descriptor.argument(arg).ok_or_else(|| {
            SessionError::NotFound(format!("'{}' has no argument '{arg}'", node.name()))
        })?;
        let reject = |code, detail: String| {
            SessionError::unprocessable(vec![Violation::new(code, path, detail)])
        };
        let mut value = coerce_value(spec, raw)
            .map_err(|e| reject(ViolationCode::CoercionError, e.to_string()))?;
        if let (ValueKind::String, Value::Str(s)) = (spec.value_kind, &value) {
            let expanded = expand_placeholders(s, &self.env)
                .map_err(|e| reject(ViolationCode::UnknownPlaceholder, e.to_string()))?;
            value = Value::Str(expanded);
        }

        let mut tree = self.tree.clone();
        tree.node_at_mut(path)
            .expect("path checked above")
            .values
            .insert(arg.to_string(), value.clone());
        let violations = validate_tree(&tree);
        self.commit(tree, violations);
        Ok(self.outcome(Some(path.to_vec()), Some(value)))
    }

    /// Replaces the tree with a bare root.
    pub fn reset(&mut self) -> Outcome {
        let tree = bare_root(&self.root);
        let violations = validate_tree(&tree);
        self.commit(tree, violations);
        self.outcome(None, None)
    }

    /// Recomputes the violations of the committed tree.
    pub fn validate(&mut self) -> &[Violation] {
        self.last_violations = validate_tree(&self.tree);
        &self.last_violations
    }

    /// Case-insensitive substring search over module names, argument names
    /// and argument values. Requirement keys count as argument names.
    pub fn search(&self, query: &str) -> Vec<SearchMatch> {
        let needle = query.to_lowercase();
        let hit = |text: &str| text.to_lowercase().contains(&needle);
        let mut out = Vec::new();
        self.tree.walk(|path, node| {
            let mut push = |field, text: &str| {
                out.push(SearchMatch {
                    node_path: path.to_vec(),
                    field,
                    matched_text: text.to_string(),
                })
            };
            if hit(node.name()) {
                push(MatchField::ModuleName, node.name());
            }
            for (name, value) in &node.values {
                if hit(name) {
                    push(MatchField::ArgName, name);
                }
                let text = value.to_string();
                if hit(&text) {
                    push(MatchField::ArgValue, &text);
                }
            }
            for req in &node.descriptor.child_requirements {
                if hit(&req.key) {
                    push(MatchField::ArgName, &req.key);
                }
            }
        });
        out
    }

    /// The config of the subtree at `scope` (the entry module by default),
    /// written even if the subtree is incomplete.
    pub fn save(&self, scope: Option<&[PathStep]>) -> Result<ConfigDocument, SessionError> {
        let scope = scope
            .map(<[PathStep]>::to_vec)
            .unwrap_or_else(|| self.entry_path());
        if scope.is_empty() {
            return Err(SessionError::BadRequest(
                "the root itself has no config; save the entry module instead".into(),
            ));
        }
        Ok(emit_config(self.node(&scope)?))
    }

    /// The canonical config of the whole experiment; fails while the tree
    /// has violations.
    pub fn generate(&self) -> Result<ConfigDocument, SessionError> {
        if !self.last_violations.is_empty() {
            return Err(SessionError::conflict(self.last_violations.clone()));
        }
        let entry = self.entry_node().expect("a valid tree has an entry module");
        generate_config(entry).map_err(|e| SessionError::conflict(e.0))
    }

    /// The entry module, ready to be run.
    pub fn runnable(&self) -> Result<ArgumentTreeNode, SessionError> {
        if !self.last_violations.is_empty() {
            return Err(SessionError::conflict(self.last_violations.clone()));
        }
        Ok(self
            .entry_node()
            .expect("a valid tree has an entry module")
            .clone())
    }

    /// Builds `doc` and puts the result at `graft` (the entry module by
    /// default), replacing the node there or appending if `graft` names the
    /// next free index. The document's selection key must be the
    /// requirement key of the graft point.
    pub fn load(
        &mut self,
        doc: &ConfigDocument,
        graft: Option<&[PathStep]>,
    ) -> Result<Outcome, SessionError> {
        let graft = graft
            .map(<[PathStep]>::to_vec)
            .unwrap_or_else(|| self.entry_path());
        let Some(((key, index), parent_path)) = graft.split_last() else {
            return Err(SessionError::BadRequest(
                "cannot graft onto the root".into(),
            ));
        };
        let parent = self.node(parent_path)?;
        let req = parent.descriptor.requirement(key).ok_or_else(|| {
            SessionError::NotFound(format!(
                "'{}' at {} declares no requirement '{key}'",
                parent.name(),
                describe(parent_path)
            ))
        })?;
        let siblings = parent.children_of(key).len();
        if *index > siblings {
            return Err(SessionError::NotFound(format!(
                "no node at {} and it is not the next free slot",
                describe(&graft)
            )));
        }
        if *index == siblings && req.count_max.is_some_and(|max| siblings >= max) {
            let detail = format!(
                "{key} requires {}, grafting would make {}",
                req.describe_count(),
                siblings + 1
            );
            let v = Violation::new(ViolationCode::CountViolation, parent_path, detail);
            return Err(SessionError::conflict(vec![v]));
        }

        let entry = EntryPoint::new(key.clone(), req.allowed_kind.clone());
        let (built, build_violations) = build_tree_lenient(&self.registry, doc, &self.env, &entry);
        let rebase = |v: Violation| {
            let mut path = graft.clone();
            path.extend(v.path);
            Violation { path, ..v }
        };
        let selection_breach = format!("{key} requires exactly 1,");
        let (structural, document): (Vec<_>, Vec<_>) = build_violations
            .into_iter()
            .filter(|v| {
                v.code != ViolationCode::CountViolation
                    || (v.path.is_empty() && v.detail.starts_with(&selection_breach))
            })
            .map(rebase)
            .partition(|v| {
                matches!(
                    v.code,
                    ViolationCode::KindMismatch
                        | ViolationCode::TagMismatch
                        | ViolationCode::DuplicateRequirementKey
                )
            });
        let Some(mut node) = built else {
            return Err(SessionError::unprocessable(document));
        };
        if !document.is_empty() {
            return Err(SessionError::unprocessable(document));
        }
        if !structural.is_empty() {
            return Err(SessionError::conflict(structural));
        }
        if !tags_match(&node.descriptor.tags, &req.tag_filter) {
            let detail = format!("'{}' lacks the tags required by {key}", node.name());
            let v = Violation::new(ViolationCode::TagMismatch, &graft, detail);
            return Err(SessionError::conflict(vec![v]));
        }

        node.index = *index;
        let mut tree = self.tree.clone();
        let slot = tree
            .node_at_mut(parent_path)
            .expect("parent checked above")
            .children
            .entry(key.clone())
            .or_default();
        if *index == slot.len() {
            slot.push(node);
        } else {
            slot[*index] = node;
        }
        let (tree, violations) = self.checked(tree)?;
        self.commit(tree, violations);
        Ok(self.outcome(Some(graft), None))
    }
}

fn bare_root(root: &Arc<ModuleDescriptor>) -> ArgumentTreeNode {
    ArgumentTreeNode::with_defaults(Arc::clone(root), ROOT_REQ_KEY, 0, &Placeholders::new())
        .expect("the root has no arguments")
}

fn describe(path: &[PathStep]) -> String {
    argtree_core::tree::format_path(path)
}

/// Parses a config given either as a JSON object or as JSON text.
pub fn parse_document(value: &serde_json::Value) -> Result<ConfigDocument, ConfigError> {
    match value {
        serde_json::Value::String(text) => ConfigDocument::parse(text),
        other => ConfigDocument::parse(&other.to_string()),
    }
}
