//! Argument trees: building them from a flat config, validating them,
//! turning them back into canonical configs and rendering them.

mod build;
mod docgen;
mod dot;
mod generate;
mod validate;

use std::fmt;
use std::sync::Arc;

use indexmap::IndexMap;
use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;
use thiserror::Error;

use crate::config::{expand_placeholders, Placeholders, ResolveError};
use crate::schema::{ModuleDescriptor, Value, ValueKind};

pub use build::{build_tree, build_tree_lenient, EntryPoint};
pub use docgen::docgen;
pub use dot::to_dot;
pub use generate::{emit_config, generate_config, InvalidTree};
pub use validate::{requirement_violations, validate_tree};

/// One `(requirement key, index)` hop from a parent to a child.
pub type PathStep = (String, usize);

pub fn format_path(path: &[PathStep]) -> String {
    if path.is_empty() {
        return "<root>".to_string();
    }
    path.iter()
        .map(|(k, i)| format!("{k}#{i}"))
        .collect::<Vec<_>>()
        .join("/")
}

/// A resolved module in an argument tree.
#[derive(Debug, Clone)]
pub struct ArgumentTreeNode {
    pub descriptor: Arc<ModuleDescriptor>,
    /// The requirement that selected this node.
    pub req_key: String,
    pub index: usize,
    pub values: IndexMap<String, Value>,
    /// Children per requirement key, in declaration order.
    pub children: IndexMap<String, Vec<ArgumentTreeNode>>,
}

/// Structural equality: descriptor names, positions, values and children.
impl PartialEq for ArgumentTreeNode {
    fn eq(&self, other: &Self) -> bool {
        self.descriptor.name == other.descriptor.name
            && self.req_key == other.req_key
            && self.index == other.index
            && self.values == other.values
            && self.children == other.children
    }
}

impl ArgumentTreeNode {
    /// A node with every argument at its (expanded) default and no children.
    pub fn with_defaults(
        descriptor: Arc<ModuleDescriptor>,
        req_key: impl Into<String>,
        index: usize,
        env: &Placeholders,
    ) -> Result<Self, ResolveError> {
        let mut values = IndexMap::new();
        for spec in &descriptor.arguments {
            let mut value = spec.default_value()?;
            if let (ValueKind::String, Value::Str(s)) = (spec.value_kind, &value) {
                value = Value::Str(expand_placeholders(s, env)?);
            }
            values.insert(spec.name.clone(), value);
        }
        let children = descriptor
            .child_requirements
            .iter()
            .map(|r| (r.key.clone(), Vec::new()))
            .collect();
        Ok(ArgumentTreeNode {
            descriptor,
            req_key: req_key.into(),
            index,
            values,
            children,
        })
    }

    pub fn name(&self) -> &str {
        &self.descriptor.name
    }

    pub fn children_of(&self, req_key: &str) -> &[ArgumentTreeNode] {
        self.children.get(req_key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn node_at(&self, path: &[PathStep]) -> Option<&ArgumentTreeNode> {
        match path.split_first() {
            None => Some(self),
            Some(((key, i), rest)) => self.children.get(key)?.get(*i)?.node_at(rest),
        }
    }

    pub fn node_at_mut(&mut self, path: &[PathStep]) -> Option<&mut ArgumentTreeNode> {
        match path.split_first() {
            None => Some(self),
            Some(((key, i), rest)) => self.children.get_mut(key)?.get_mut(*i)?.node_at_mut(rest),
        }
    }

    /// Depth-first pre-order visit with each node's path from `self`.
    pub fn walk<F: FnMut(&[PathStep], &ArgumentTreeNode)>(&self, mut f: F) {
        fn go<F: FnMut(&[PathStep], &ArgumentTreeNode)>(
            node: &ArgumentTreeNode,
            path: &mut Vec<PathStep>,
            f: &mut F,
        ) {
            f(path, node);
            for (key, kids) in &node.children {
                for (i, kid) in kids.iter().enumerate() {
                    path.push((key.clone(), i));
                    go(kid, path, f);
                    path.pop();
                }
            }
        }
        go(self, &mut Vec::new(), &mut f);
    }

    pub fn node_count(&self) -> usize {
        let mut n = 0;
        self.walk(|_, _| n += 1);
        n
    }

    /// Re-assigns `index` of every child to its position.
    pub fn renumber(&mut self) {
        for kids in self.children.values_mut() {
            for (i, kid) in kids.iter_mut().enumerate() {
                kid.index = i;
                kid.renumber();
            }
        }
    }
}

impl Serialize for ArgumentTreeNode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(6))?;
        map.serialize_entry("name", &self.descriptor.name)?;
        map.serialize_entry("kind", &self.descriptor.kind)?;
        map.serialize_entry("req_key", &self.req_key)?;
        map.serialize_entry("index", &self.index)?;
        map.serialize_entry("values", &self.values)?;
        map.serialize_entry("children", &self.children)?;
        map.end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum ViolationCode {
    UnknownModule,
    MissingModule,
    CountViolation,
    KindMismatch,
    TagMismatch,
    UnparsedKey,
    DuplicateRequirementKey,
    AmbiguousValue,
    CoercionError,
    UnknownPlaceholder,
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A path-addressed breach of the tree specification. For `UnparsedKey` the
/// detail is exactly the offending key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub path: Vec<PathStep>,
    pub detail: String,
}

impl Violation {
    pub fn new(code: ViolationCode, path: &[PathStep], detail: impl Into<String>) -> Self {
        Violation {
            code,
            path: path.to_vec(),
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} at {}: {}",
            self.code,
            format_path(&self.path),
            self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("configuration is invalid ({} violation(s)):\n{}", .violations.len(), list(.violations))]
pub struct BuildError {
    pub violations: Vec<Violation>,
}

fn list(v: &[Violation]) -> String {
    v.iter()
        .map(|x| format!("  {x}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl BuildError {
    pub fn codes(&self) -> Vec<ViolationCode> {
        self.violations.iter().map(|v| v.code).collect()
    }
}
