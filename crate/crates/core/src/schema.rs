//! Self-description vocabulary carried by every registered module.
//!
//! A [`ModuleDescriptor`] names a module kind, lists its hyper-parameters as
//! [`ArgumentSpec`]s and declares which child modules it needs through
//! [`ChildRequirementSpec`]s. Defaults are stored raw and only coerced when
//! asked, so a descriptor can be inspected without side effects.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Prefix shared by all child-requirement keys.
pub const REQUIREMENT_PREFIX: &str = "cls_";

/// The four scalar kinds an argument can take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    String,
    Integer,
    Real,
    Boolean,
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueKind::String => "string",
            ValueKind::Integer => "integer",
            ValueKind::Real => "real",
            ValueKind::Boolean => "boolean",
        })
    }
}

/// A scalar value, either raw (as read from a config) or typed (after coercion).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Real(f64),
    Str(String),
}

impl Value {
    /// Converts a JSON scalar. Returns `None` for arrays, objects and null.
    pub fn from_json(json: &serde_json::Value) -> Option<Value> {
        match json {
            serde_json::Value::Bool(b) => Some(Value::Bool(*b)),
            serde_json::Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Some(Value::Int(i))
                } else {
                    n.as_f64().map(Value::Real)
                }
            }
            serde_json::Value::String(s) => Some(Value::Str(s.clone())),
            _ => None,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Bool(b) => serde_json::Value::Bool(*b),
            Value::Int(i) => serde_json::Value::from(*i),
            Value::Real(r) => serde_json::Number::from_f64(*r)
                .map(serde_json::Value::Number)
                .unwrap_or(serde_json::Value::Null),
            Value::Str(s) => serde_json::Value::String(s.clone()),
        }
    }

    /// Parses command-line text: JSON scalars are taken as such, anything
    /// else is a plain string.
    pub fn from_cli_text(text: &str) -> Value {
        serde_json::from_str::<serde_json::Value>(text)
            .ok()
            .and_then(|json| Value::from_json(&json))
            .unwrap_or_else(|| Value::Str(text.to_string()))
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_real(&self) -> Option<f64> {
        match self {
            Value::Real(r) => Some(*r),
            Value::Int(i) => Some(*i as f64),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            // Debug keeps the trailing ".0" and uses exponents for tiny values.
            Value::Real(r) => write!(f, "{r:?}"),
            Value::Str(s) => f.write_str(s),
        }
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

impl From<i32> for Value {
    fn from(i: i32) -> Self {
        Value::Int(i64::from(i))
    }
}

impl From<f64> for Value {
    fn from(r: f64) -> Self {
        Value::Real(r)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Str(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Str(s)
    }
}

/// Metadata tag values attached to descriptors and requirement filters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TagValue {
    Bool(bool),
    Str(String),
}

impl fmt::Display for TagValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TagValue::Bool(b) => write!(f, "{b}"),
            TagValue::Str(s) => f.write_str(s),
        }
    }
}

impl From<bool> for TagValue {
    fn from(b: bool) -> Self {
        TagValue::Bool(b)
    }
}

impl From<&str> for TagValue {
    fn from(s: &str) -> Self {
        TagValue::Str(s.to_string())
    }
}

pub type Tags = BTreeMap<String, TagValue>;

/// Returns true if every `(tag, value)` pair of `filter` is present in `tags`.
pub fn tags_match(tags: &Tags, filter: &Tags) -> bool {
    filter.iter().all(|(k, v)| tags.get(k) == Some(v))
}

/// One hyper-parameter of a module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgumentSpec {
    pub name: String,
    #[serde(rename = "kind")]
    pub value_kind: ValueKind,
    pub default: Value,
    pub help: String,
    #[serde(default)]
    pub choices: Vec<String>,
}

impl ArgumentSpec {
    pub fn new(
        name: impl Into<String>,
        value_kind: ValueKind,
        default: impl Into<Value>,
        help: impl Into<String>,
    ) -> Self {
        ArgumentSpec {
            name: name.into(),
            value_kind,
            default: default.into(),
            help: help.into(),
            choices: Vec::new(),
        }
    }

    pub fn with_choices<I, S>(mut self, choices: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.choices = choices.into_iter().map(Into::into).collect();
        self
    }

    /// The default, coerced to this argument's kind.
    pub fn default_value(&self) -> Result<Value, CoercionError> {
        coerce_value(self, &self.default)
    }
}

/// A declaration that a module needs `count_min..=count_max` children of a
/// given kind, optionally restricted by metadata tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildRequirementSpec {
    pub key: String,
    pub allowed_kind: String,
    #[serde(default)]
    pub tag_filter: Tags,
    pub count_min: usize,
    /// `None` means unbounded.
    pub count_max: Option<usize>,
}

impl ChildRequirementSpec {
    pub fn new(
        key: impl Into<String>,
        allowed_kind: impl Into<String>,
        count_min: usize,
        count_max: Option<usize>,
    ) -> Self {
        ChildRequirementSpec {
            key: key.into(),
            allowed_kind: allowed_kind.into(),
            tag_filter: Tags::new(),
            count_min,
            count_max,
        }
    }

    pub fn exactly_one(key: impl Into<String>, allowed_kind: impl Into<String>) -> Self {
        Self::new(key, allowed_kind, 1, Some(1))
    }

    pub fn optional(key: impl Into<String>, allowed_kind: impl Into<String>) -> Self {
        Self::new(key, allowed_kind, 0, Some(1))
    }

    pub fn any_number(key: impl Into<String>, allowed_kind: impl Into<String>) -> Self {
        Self::new(key, allowed_kind, 0, None)
    }

    pub fn with_tag(mut self, tag: impl Into<String>, value: impl Into<TagValue>) -> Self {
        self.tag_filter.insert(tag.into(), value.into());
        self
    }

    pub fn accepts_count(&self, n: usize) -> bool {
        n >= self.count_min && self.count_max.is_none_or(|max| n <= max)
    }

    /// Human-readable bounds, e.g. `1..1` or `0..*`.
    pub fn bounds(&self) -> String {
        match self.count_max {
            Some(max) => format!("{}..{}", self.count_min, max),
            None => format!("{}..*", self.count_min),
        }
    }

    pub fn describe_count(&self) -> String {
        match self.count_max {
            Some(max) if max == self.count_min => format!("exactly {max}"),
            Some(max) => format!("between {} and {}", self.count_min, max),
            None => format!("at least {}", self.count_min),
        }
    }
}

/// A registered module kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleDescriptor {
    pub name: String,
    pub kind: String,
    #[serde(default)]
    pub tags: Tags,
    #[serde(default)]
    pub arguments: Vec<ArgumentSpec>,
    #[serde(default)]
    pub child_requirements: Vec<ChildRequirementSpec>,
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub help: String,
}

impl ModuleDescriptor {
    pub fn new(name: impl Into<String>, kind: impl Into<String>) -> Self {
        ModuleDescriptor {
            name: name.into(),
            kind: kind.into(),
            tags: Tags::new(),
            arguments: Vec::new(),
            child_requirements: Vec::new(),
            source: String::new(),
            help: String::new(),
        }
    }

    pub fn help(mut self, help: impl Into<String>) -> Self {
        self.help = help.into();
        self
    }

    pub fn source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    pub fn tag(mut self, tag: impl Into<String>, value: impl Into<TagValue>) -> Self {
        self.tags.insert(tag.into(), value.into());
        self
    }

    pub fn arg(mut self, spec: ArgumentSpec) -> Self {
        self.arguments.push(spec);
        self
    }

    pub fn requires(mut self, requirement: ChildRequirementSpec) -> Self {
        self.child_requirements.push(requirement);
        self
    }

    pub fn argument(&self, name: &str) -> Option<&ArgumentSpec> {
        self.arguments.iter().find(|a| a.name == name)
    }

    pub fn requirement(&self, key: &str) -> Option<&ChildRequirementSpec> {
        self.child_requirements.iter().find(|r| r.key == key)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("argument '{arg}': cannot use {raw} as {expected}: {reason}")]
pub struct CoercionError {
    pub arg: String,
    pub raw: String,
    pub expected: ValueKind,
    pub reason: String,
}

/// Converts `raw` to the kind declared by `spec`, enforcing `spec.choices`.
pub fn coerce_value(spec: &ArgumentSpec, raw: &Value) -> Result<Value, CoercionError> {
    let fail = |reason: &str| CoercionError {
        arg: spec.name.clone(),
        raw: match raw {
            Value::Str(s) => format!("{s:?}"),
            other => other.to_string(),
        },
        expected: spec.value_kind,
        reason: reason.to_string(),
    };

    let value = match (spec.value_kind, raw) {
        (ValueKind::Boolean, Value::Bool(b)) => Value::Bool(*b),
        (ValueKind::Boolean, Value::Str(s)) => match s.as_str() {
            "True" | "true" => Value::Bool(true),
            "False" | "false" => Value::Bool(false),
            _ => return Err(fail("expected true/false")),
        },
        (ValueKind::Boolean, _) => return Err(fail("expected true/false")),

        (ValueKind::Integer, Value::Int(i)) => Value::Int(*i),
        (ValueKind::Integer, Value::Real(r)) => {
            if r.fract() != 0.0 || !r.is_finite() || r.abs() > i64::MAX as f64 {
                return Err(fail("fractional or out-of-range number"));
            }
            Value::Int(*r as i64)
        }
        (ValueKind::Integer, Value::Str(s)) => s
            .trim()
            .parse::<i64>()
            .map(Value::Int)
            .map_err(|_| fail("not an integer"))?,
        (ValueKind::Integer, Value::Bool(_)) => return Err(fail("not an integer")),

        (ValueKind::Real, Value::Real(r)) => Value::Real(*r),
        (ValueKind::Real, Value::Int(i)) => Value::Real(*i as f64),
        (ValueKind::Real, Value::Str(s)) => s
            .trim()
            .parse::<f64>()
            .map(Value::Real)
            .map_err(|_| fail("not a number"))?,
        (ValueKind::Real, Value::Bool(_)) => return Err(fail("not a number")),

        (ValueKind::String, Value::Str(s)) => Value::Str(s.clone()),
        (ValueKind::String, other) => Value::Str(other.to_string()),
    };

    if let Value::Real(r) = value {
        if !r.is_finite() {
            return Err(fail("not a finite number"));
        }
    }

    if !spec.choices.is_empty() {
        let text = value.to_string();
        if !spec.choices.contains(&text) {
            return Err(fail(&format!(
                "must be one of [{}]",
                spec.choices.join(", ")
            )));
        }
    }
    Ok(value)
}

/// Checks the character rules shared by argument names and class names.
pub fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && !s
            .chars()
            .any(|c| c.is_whitespace() || matches!(c, '.' | '{' | '}' | '#' | ',' | '='))
}

pub fn is_requirement_key(s: &str) -> bool {
    s.len() > REQUIREMENT_PREFIX.len() && s.starts_with(REQUIREMENT_PREFIX) && is_identifier(s)
}

/// A breach of a [`ModuleDescriptor`] invariant.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DescriptorViolation {
    #[error("invalid module name '{0}'")]
    BadName(String),
    #[error("empty kind tag")]
    EmptyKind,
    #[error("invalid argument name '{0}'")]
    BadArgumentName(String),
    #[error("duplicate argument '{0}'")]
    DuplicateArgument(String),
    #[error("bad default for '{arg}': {detail}")]
    BadDefault { arg: String, detail: String },
    #[error("requirement key '{0}' must start with 'cls_' and be a plain identifier")]
    BadRequirementKey(String),
    #[error("duplicate requirement key '{0}'")]
    DuplicateRequirementKey(String),
    #[error("requirement '{key}' has invalid bounds {bounds}")]
    BadCount { key: String, bounds: String },
}

pub fn validate_descriptor(d: &ModuleDescriptor) -> Vec<DescriptorViolation> {
    let mut out = Vec::new();
    if !is_identifier(&d.name) || d.name.starts_with(REQUIREMENT_PREFIX) {
        out.push(DescriptorViolation::BadName(d.name.clone()));
    }
    if d.kind.trim().is_empty() {
        out.push(DescriptorViolation::EmptyKind);
    }

    let mut seen = HashSet::new();
    for arg in &d.arguments {
        if !is_identifier(&arg.name) {
            out.push(DescriptorViolation::BadArgumentName(arg.name.clone()));
        }
        if !seen.insert(arg.name.as_str()) {
            out.push(DescriptorViolation::DuplicateArgument(arg.name.clone()));
        }
        if let Err(e) = arg.default_value() {
            out.push(DescriptorViolation::BadDefault {
                arg: arg.name.clone(),
                detail: e.reason,
            });
        }
    }

    let mut seen = HashSet::new();
    for req in &d.child_requirements {
        if !is_requirement_key(&req.key) {
            out.push(DescriptorViolation::BadRequirementKey(req.key.clone()));
        }
        if !seen.insert(req.key.as_str()) {
            out.push(DescriptorViolation::DuplicateRequirementKey(
                req.key.clone(),
            ));
        }
        let bad_bounds = match req.count_max {
            Some(max) => max == 0 || req.count_min > max,
            None => false,
        };
        if bad_bounds {
            out.push(DescriptorViolation::BadCount {
                key: req.key.clone(),
                bounds: req.bounds(),
            });
        }
    }
    out
}
