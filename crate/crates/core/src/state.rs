//! Hierarchical module states.
//!
//! Every buildable module can describe itself as a recursive
//! `{name, kwargs, submodules}` record and be rebuilt from one through the
//! registry. Over-complete modules (several candidates per slot) can export
//! only a selected subset of their candidates, which is how a searched
//! structure gets finalized.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::{LookupError, Registry};
use crate::tree::ArgumentTreeNode;

pub type Kwargs = BTreeMap<String, serde_json::Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleState {
    pub name: String,
    #[serde(default)]
    pub kwargs: Kwargs,
    #[serde(default)]
    pub submodules: BTreeMap<String, Submodule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Submodule {
    One(Box<ModuleState>),
    Many(Vec<ModuleState>),
}

impl ModuleState {
    pub fn new(name: impl Into<String>) -> Self {
        ModuleState {
            name: name.into(),
            kwargs: Kwargs::new(),
            submodules: BTreeMap::new(),
        }
    }

    pub fn kwarg(mut self, key: impl Into<String>, value: impl Into<serde_json::Value>) -> Self {
        self.kwargs.insert(key.into(), value.into());
        self
    }

    pub fn one(mut self, slot: impl Into<String>, state: ModuleState) -> Self {
        self.submodules
            .insert(slot.into(), Submodule::One(Box::new(state)));
        self
    }

    pub fn many(mut self, slot: impl Into<String>, states: Vec<ModuleState>) -> Self {
        self.submodules.insert(slot.into(), Submodule::Many(states));
        self
    }

    /// Parses a state file and checks that every kwarg is a scalar.
    pub fn parse(text: &str) -> Result<Self, StateError> {
        let state: ModuleState =
            serde_json::from_str(text).map_err(|e| StateError::Parse(e.to_string()))?;
        state.check_scalars()?;
        Ok(state)
    }

    fn check_scalars(&self) -> Result<(), StateError> {
        for (key, value) in &self.kwargs {
            if value.is_array() || value.is_object() {
                return Err(StateError::NonScalarKwarg {
                    module: self.name.clone(),
                    key: key.clone(),
                });
            }
        }
        for sub in self.submodules.values() {
            match sub {
                Submodule::One(s) => s.check_scalars()?,
                Submodule::Many(v) => v.iter().try_for_each(ModuleState::check_scalars)?,
            }
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        1 + self
            .submodules
            .values()
            .map(|s| match s {
                Submodule::One(s) => s.depth(),
                Submodule::Many(v) => v.iter().map(ModuleState::depth).max().unwrap_or(0),
            })
            .max()
            .unwrap_or(0)
    }

    pub fn to_canonical_string(&self) -> String {
        let value = serde_json::to_value(self).expect("module states serialize");
        canonical_json(&value)
    }
}

/// Canonical UTF-8 JSON bytes for a state.
pub fn canonical_serialize(state: &ModuleState) -> Vec<u8> {
    state.to_canonical_string().into_bytes()
}

/// Deterministic JSON text: object keys sorted, two-space indentation,
/// integers without a decimal point, reals in shortest round-trip form, and
/// a trailing newline.
pub fn canonical_json(value: &serde_json::Value) -> String {
    let mut out = String::new();
    write_value(value, 0, &mut out);
    out.push('\n');
    out
}

fn write_value(value: &serde_json::Value, indent: usize, out: &mut String) {
    use serde_json::Value as J;
    match value {
        J::Object(map) if map.is_empty() => out.push_str("{}"),
        J::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, key) in keys.iter().enumerate() {
                push_indent(indent + 1, out);
                out.push_str(&serde_json::to_string(key).expect("string serializes"));
                out.push_str(": ");
                write_value(&map[key.as_str()], indent + 1, out);
                if i + 1 < keys.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            push_indent(indent, out);
            out.push('}');
        }
        J::Array(items) if items.is_empty() => out.push_str("[]"),
        J::Array(items) => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                push_indent(indent + 1, out);
                write_value(item, indent + 1, out);
                if i + 1 < items.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            push_indent(indent, out);
            out.push(']');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}

fn push_indent(level: usize, out: &mut String) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

/// Candidate indices chosen per multi-candidate node, keyed by node name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionProvider {
    pub selections: BTreeMap<String, Vec<usize>>,
}

impl SelectionProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn select(mut self, node: impl Into<String>, indices: Vec<usize>) -> Self {
        self.selections.insert(node.into(), indices);
        self
    }

    pub fn get(&self, node: &str) -> Option<&[usize]> {
        self.selections.get(node).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateError {
    #[error("unknown module '{0}'")]
    UnknownModule(String),
    #[error("module '{name}' is unavailable: {reason}")]
    MissingModule { name: String, reason: String },
    #[error("cannot construct '{name}': {detail}")]
    Construction { name: String, detail: String },
    #[error("no candidate selection for node '{0}'")]
    MissingSelection(String),
    #[error("empty candidate selection for node '{0}'")]
    EmptySelection(String),
    #[error("node '{node}' has {len} candidate(s), index {index} is out of range")]
    IndexOutOfRange {
        node: String,
        index: usize,
        len: usize,
    },
    #[error("kwarg '{key}' of '{module}' is not a scalar")]
    NonScalarKwarg { module: String, key: String },
    #[error("state syntax error: {0}")]
    Parse(String),
}

impl From<LookupError> for StateError {
    fn from(e: LookupError) -> Self {
        match e {
            LookupError::UnknownModule(name) => StateError::UnknownModule(name),
            LookupError::MissingModule { name, reason } => {
                StateError::MissingModule { name, reason }
            }
        }
    }
}

/// A module that can export its state and be rebuilt from it.
pub trait BuildableModule: fmt::Debug + Send + Sync {
    /// The registered name this module is rebuilt under.
    fn type_name(&self) -> &str;

    fn export_state(
        &self,
        finalize: bool,
        selection: &SelectionProvider,
    ) -> Result<ModuleState, StateError>;
}

pub enum BuiltSubmodule {
    One(Box<dyn BuildableModule>),
    Many(Vec<Box<dyn BuildableModule>>),
}

/// Constructor arguments handed to a [`StateBuilder`]: the kwargs and the
/// already rebuilt submodules. Constructors take what they know and call
/// [`StateArgs::finish`] to reject leftovers.
pub struct StateArgs {
    pub name: String,
    pub kwargs: Kwargs,
    pub submodules: BTreeMap<String, BuiltSubmodule>,
}

pub type StateBuilder = fn(StateArgs) -> Result<Box<dyn BuildableModule>, StateError>;

impl StateArgs {
    fn fail(&self, detail: String) -> StateError {
        StateError::Construction {
            name: self.name.clone(),
            detail,
        }
    }

    fn take<T>(
        &mut self,
        key: &str,
        default: T,
        expected: &str,
        read: impl Fn(&serde_json::Value) -> Option<T>,
    ) -> Result<T, StateError> {
        match self.kwargs.remove(key) {
            None => Ok(default),
            Some(v) => {
                read(&v).ok_or_else(|| self.fail(format!("kwarg '{key}' = {v} is not {expected}")))
            }
        }
    }

    pub fn take_int(&mut self, key: &str, default: i64) -> Result<i64, StateError> {
        self.take(key, default, "an integer", serde_json::Value::as_i64)
    }

    pub fn take_real(&mut self, key: &str, default: f64) -> Result<f64, StateError> {
        self.take(key, default, "a number", serde_json::Value::as_f64)
    }

    pub fn take_bool(&mut self, key: &str, default: bool) -> Result<bool, StateError> {
        self.take(key, default, "a boolean", serde_json::Value::as_bool)
    }

    pub fn take_str(&mut self, key: &str, default: &str) -> Result<String, StateError> {
        self.take(key, default.to_string(), "a string", |v| {
            v.as_str().map(str::to_string)
        })
    }

    /// A string that may also be `null`.
    pub fn take_opt_str(&mut self, key: &str) -> Result<Option<String>, StateError> {
        self.take(key, None, "a string or null", |v| match v {
            serde_json::Value::Null => Some(None),
            serde_json::Value::String(s) => Some(Some(s.clone())),
            _ => None,
        })
    }

    pub fn take_one(&mut self, slot: &str) -> Result<Box<dyn BuildableModule>, StateError> {
        match self.submodules.remove(slot) {
            Some(BuiltSubmodule::One(m)) => Ok(m),
            Some(BuiltSubmodule::Many(_)) => {
                Err(self.fail(format!("submodule '{slot}' must be a single module")))
            }
            None => Err(self.fail(format!("missing submodule '{slot}'"))),
        }
    }

    pub fn take_many(&mut self, slot: &str) -> Result<Vec<Box<dyn BuildableModule>>, StateError> {
        match self.submodules.remove(slot) {
            Some(BuiltSubmodule::Many(v)) => Ok(v),
            Some(BuiltSubmodule::One(_)) => {
                Err(self.fail(format!("submodule '{slot}' must be a list")))
            }
            None => Ok(Vec::new()),
        }
    }

    pub fn finish(self) -> Result<(), StateError> {
        if let Some(key) = self.kwargs.keys().next() {
            return Err(self.fail(format!("unexpected kwarg '{key}'")));
        }
        if let Some(slot) = self.submodules.keys().next() {
            return Err(self.fail(format!("unexpected submodule '{slot}'")));
        }
        Ok(())
    }
}

pub fn export_state(
    module: &dyn BuildableModule,
    finalize: bool,
    selection: &SelectionProvider,
) -> Result<ModuleState, StateError> {
    module.export_state(finalize, selection)
}

/// Rebuilds a module depth-first: submodules first, then the named module
/// from its kwargs and the rebuilt submodules.
pub fn import_state(
    registry: &Registry,
    state: &ModuleState,
) -> Result<Box<dyn BuildableModule>, StateError> {
    let descriptor = registry.lookup(&state.name)?;
    let builder =
        registry
            .state_builder(&descriptor.name)
            .ok_or_else(|| StateError::Construction {
                name: descriptor.name.clone(),
                detail: "module cannot be rebuilt from a state".to_string(),
            })?;

    let mut submodules = BTreeMap::new();
    for (slot, sub) in &state.submodules {
        let built = match sub {
            Submodule::One(s) => BuiltSubmodule::One(import_state(registry, s)?),
            Submodule::Many(v) => BuiltSubmodule::Many(
                v.iter()
                    .map(|s| import_state(registry, s))
                    .collect::<Result<_, _>>()?,
            ),
        };
        submodules.insert(slot.clone(), built);
    }
    builder(StateArgs {
        name: descriptor.name.clone(),
        kwargs: state.kwargs.clone(),
        submodules,
    })
}

/// Describes an argument-tree node as a state record: its values become
/// kwargs and each requirement becomes a list-valued submodule slot.
pub fn tree_state(node: &ArgumentTreeNode) -> ModuleState {
    ModuleState {
        name: node.descriptor.name.clone(),
        kwargs: node
            .values
            .iter()
            .map(|(k, v)| (k.clone(), v.to_json()))
            .collect(),
        submodules: node
            .children
            .iter()
            .map(|(k, kids)| {
                (
                    k.clone(),
                    Submodule::Many(kids.iter().map(tree_state).collect()),
                )
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_form_sorts_keys_and_keeps_number_kinds() {
        let a: serde_json::Value =
            serde_json::from_str(r#"{"b": 6.0, "a": [1, {"z": null, "y": 1e-16}], "c": {}}"#)
                .unwrap();
        let text = canonical_json(&a);
        assert_eq!(
            text,
            "{\n  \"a\": [\n    1,\n    {\n      \"y\": 1e-16,\n      \"z\": null\n    }\n  ],\n  \"b\": 6.0,\n  \"c\": {}\n}\n"
        );
        let again: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(canonical_json(&again), text);
    }

    #[test]
    fn key_order_does_not_matter() {
        let x = ModuleState::parse(r#"{"name": "A", "kwargs": {"p": 1, "q": "s"}}"#).unwrap();
        let y =
            ModuleState::parse(r#"{"kwargs": {"q": "s", "p": 1}, "name": "A", "submodules": {}}"#)
                .unwrap();
        assert_eq!(canonical_serialize(&x), canonical_serialize(&y));
    }

    #[test]
    fn parse_rejects_nested_kwargs_and_unknown_fields() {
        assert!(matches!(
            ModuleState::parse(r#"{"name": "A", "kwargs": {"p": [1]}}"#),
            Err(StateError::NonScalarKwarg { .. })
        ));
        assert!(matches!(
            ModuleState::parse(r#"{"name": "A", "extra": 1}"#),
            Err(StateError::Parse(_))
        ));
        assert!(matches!(
            ModuleState::parse("nope"),
            Err(StateError::Parse(_))
        ));
    }

    #[test]
    fn submodules_one_or_many() {
        let s = ModuleState::new("Outer")
            .one("op", ModuleState::new("Leaf"))
            .many(
                "list",
                vec![
                    ModuleState::new("Leaf"),
                    ModuleState::new("Leaf").kwarg("k", 2),
                ],
            );
        assert_eq!(s.depth(), 2);
        let back = ModuleState::parse(&s.to_canonical_string()).unwrap();
        assert_eq!(back, s);
    }
}
