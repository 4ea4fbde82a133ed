//! Flat configuration documents.
//!
//! A config is a single-level JSON object. Keys come in three forms:
//!
//! * `cls_trainer` selects the class(es) filling a requirement, as a
//!   comma-separated list;
//! * `{cls_trainer}.max_epochs` / `{cls_callbacks#1}.top_n` set an argument on
//!   whichever class fills the requirement (the plain form only binds index 0);
//! * `SimpleTrainer.max_epochs` sets an argument by class name.
//!
//! String values may contain `{name}` placeholders which are expanded from a
//! separate environment; `{cls_...}` tokens are never expanded.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use indexmap::IndexMap;
use serde::de::{Deserialize, Deserializer, MapAccess, Visitor};
use thiserror::Error;

use crate::schema::{
    coerce_value, is_identifier, is_requirement_key, ArgumentSpec, CoercionError, Value,
};

/// Values substituted for `{name}` tokens inside string arguments.
pub type Placeholders = BTreeMap<String, String>;

/// The default placeholder environment: `path_tmp` points into the OS temp dir.
pub fn default_placeholders() -> Placeholders {
    let tmp = std::env::temp_dir().join("argtree");
    Placeholders::from([("path_tmp".to_string(), tmp.to_string_lossy().into_owned())])
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum KeyForm {
    Selection {
        req_key: String,
    },
    /// `index` is `None` for the plain `{cls_x}.arg` form.
    WildcardArg {
        req_key: String,
        index: Option<usize>,
        arg: String,
    },
    ExplicitArg {
        class_name: String,
        arg: String,
    },
}

impl fmt::Display for KeyForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeyForm::Selection { req_key } => f.write_str(req_key),
            KeyForm::WildcardArg {
                req_key,
                index: None,
                arg,
            } => write!(f, "{{{req_key}}}.{arg}"),
            KeyForm::WildcardArg {
                req_key,
                index: Some(i),
                arg,
            } => {
                write!(f, "{{{req_key}#{i}}}.{arg}")
            }
            KeyForm::ExplicitArg { class_name, arg } => write!(f, "{class_name}.{arg}"),
        }
    }
}

impl KeyForm {
    pub fn indexed(req_key: &str, index: usize, arg: &str) -> String {
        format!("{{{req_key}#{index}}}.{arg}")
    }

    pub fn plain(req_key: &str, arg: &str) -> String {
        format!("{{{req_key}}}.{arg}")
    }

    pub fn explicit(class_name: &str, arg: &str) -> String {
        format!("{class_name}.{arg}")
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("config syntax error: {0}")]
    Syntax(String),
    #[error("value of '{0}' is not a scalar")]
    NonScalarValue(String),
    #[error("malformed key '{key}': {reason}")]
    MalformedKey { key: String, reason: String },
    #[error("malformed override '{0}', expected key=value")]
    MalformedOverride(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ResolveError {
    #[error("ambiguous value: {}", describe_candidates(.0))]
    AmbiguousValue(Vec<(String, Value)>),
    #[error(transparent)]
    Coercion(#[from] CoercionError),
    #[error("unknown placeholder '{{{0}}}'")]
    UnknownPlaceholder(String),
}

fn describe_candidates(c: &[(String, Value)]) -> String {
    c.iter()
        .map(|(k, v)| format!("{k} = {}", v.to_json()))
        .collect::<Vec<_>>()
        .join(", ")
}

fn malformed(key: &str, reason: &str) -> ConfigError {
    ConfigError::MalformedKey {
        key: key.to_string(),
        reason: reason.to_string(),
    }
}

fn parse_index(text: &str) -> Option<usize> {
    let canonical = !text.is_empty()
        && text.bytes().all(|b| b.is_ascii_digit())
        && (text == "0" || !text.starts_with('0'));
    if canonical {
        text.parse().ok()
    } else {
        None
    }
}

/// Classifies a config key into one of the three accepted forms.
pub fn parse_key(key: &str) -> Result<KeyForm, ConfigError> {
    if let Some(rest) = key.strip_prefix('{') {
        let (inner, tail) = rest
            .split_once('}')
            .ok_or_else(|| malformed(key, "unclosed '{'"))?;
        let arg = tail
            .strip_prefix('.')
            .ok_or_else(|| malformed(key, "expected '.' after '}'"))?;
        if !is_identifier(arg) {
            return Err(malformed(key, "invalid argument name"));
        }
        let (req_key, index) = match inner.split_once('#') {
            Some((req, idx)) => {
                let index = parse_index(idx).ok_or_else(|| malformed(key, "invalid index"))?;
                (req, Some(index))
            }
            None => (inner, None),
        };
        if !is_requirement_key(req_key) {
            return Err(malformed(key, "wildcard must name a 'cls_' requirement"));
        }
        return Ok(KeyForm::WildcardArg {
            req_key: req_key.to_string(),
            index,
            arg: arg.to_string(),
        });
    }

    match key.split_once('.') {
        None if is_requirement_key(key) => Ok(KeyForm::Selection {
            req_key: key.to_string(),
        }),
        None => Err(malformed(
            key,
            "not a requirement key and not of the form Class.argument",
        )),
        Some((class_name, arg)) => {
            if !is_identifier(class_name) || class_name.starts_with("cls_") {
                return Err(malformed(key, "invalid class name"));
            }
            if !is_identifier(arg) {
                return Err(malformed(key, "invalid argument name"));
            }
            Ok(KeyForm::ExplicitArg {
                class_name: class_name.to_string(),
                arg: arg.to_string(),
            })
        }
    }
}

/// Replaces `{name}` tokens with values from `env`. Tokens starting with
/// `cls_` and brace pairs that do not enclose an identifier are left alone.
pub fn expand_placeholders(raw: &str, env: &Placeholders) -> Result<String, ResolveError> {
    if !raw.contains('{') {
        return Ok(raw.to_string());
    }
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_identifier(&after[..close]) => {
                let name = &after[..close];
                if name.starts_with("cls_") {
                    out.push_str(&rest[open..open + close + 2]);
                } else if let Some(value) = env.get(name) {
                    out.push_str(value);
                } else {
                    return Err(ResolveError::UnknownPlaceholder(name.to_string()));
                }
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Splits a `key=value` override. The value is read as a JSON scalar when
/// possible, otherwise kept as a string.
pub fn parse_override(text: &str) -> Result<(String, Value), ConfigError> {
    let (key, value) = text
        .split_once('=')
        .ok_or_else(|| ConfigError::MalformedOverride(text.to_string()))?;
    let key = key.trim();
    parse_key(key)?;
    Ok((key.to_string(), Value::from_cli_text(value)))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigDocument {
    entries: IndexMap<String, Value>,
    consumed: BTreeSet<String>,
}

impl ConfigDocument {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let raw: UniqueMap =
            serde_json::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let mut doc = ConfigDocument::new();
        for (key, json) in raw.0 {
            parse_key(&key)?;
            let value =
                Value::from_json(&json).ok_or_else(|| ConfigError::NonScalarValue(key.clone()))?;
            doc.entries.insert(key, value);
        }
        Ok(doc)
    }

    pub fn from_entries<I, K>(entries: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (K, Value)>,
        K: Into<String>,
    {
        let mut doc = ConfigDocument::new();
        for (key, value) in entries {
            doc.insert(key, value)?;
        }
        Ok(doc)
    }

    /// Inserts or replaces an entry after checking the key grammar.
    pub fn insert(&mut self, key: impl Into<String>, value: Value) -> Result<(), ConfigError> {
        let key = key.into();
        parse_key(&key)?;
        self.entries.insert(key, value);
        Ok(())
    }

    pub fn remove(&mut self, key: &str) -> Option<Value> {
        self.consumed.remove(key);
        self.entries.shift_remove(key)
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.get(key)
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn consumed(&self) -> &BTreeSet<String> {
        &self.consumed
    }

    pub fn reset_consumed(&mut self) {
        self.consumed.clear();
    }

    /// Keys not yet read, in document order.
    pub fn unconsumed(&self) -> Vec<&str> {
        self.keys()
            .filter(|k| !self.consumed.contains(*k))
            .collect()
    }

    /// Class names selected for `req_key`; an absent key or empty value
    /// selects nothing. Marks the selection key as read.
    pub fn get_used_classes(&mut self, req_key: &str) -> Vec<String> {
        let Some(value) = self.entries.get(req_key) else {
            return Vec::new();
        };
        self.consumed.insert(req_key.to_string());
        let text = value.to_string();
        text.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect()
    }

    /// Keys that could set `arg` for the class at position `index` of
    /// `req_key`, in precedence order, paired with their raw values.
    pub fn applicable_entries(
        &self,
        req_key: &str,
        index: usize,
        class_name: &str,
        arg: &str,
    ) -> Vec<(String, Value)> {
        let mut keys = vec![KeyForm::indexed(req_key, index, arg)];
        if index == 0 {
            keys.push(KeyForm::plain(req_key, arg));
        }
        keys.push(KeyForm::explicit(class_name, arg));
        keys.into_iter()
            .filter_map(|k| self.entries.get(&k).map(|v| (k, v.clone())))
            .collect()
    }

    /// Resolves one argument value. All applicable keys must agree; they are
    /// all marked as read. Falls back to the coerced default when none apply.
    pub fn get_used_value(
        &mut self,
        req_key: &str,
        index: usize,
        class_name: &str,
        arg: &ArgumentSpec,
    ) -> Result<Value, ResolveError> {
        let hits = self.applicable_entries(req_key, index, class_name, &arg.name);
        let Some((_, first)) = hits.first() else {
            return Ok(arg.default_value()?);
        };
        // Keys that apply were read, even if their value turns out unusable.
        for (key, _) in &hits {
            self.consumed.insert(key.clone());
        }
        if hits.iter().any(|(_, v)| v != first) {
            return Err(ResolveError::AmbiguousValue(hits));
        }
        Ok(coerce_value(arg, first)?)
    }

    /// Applies `key=value` overrides, later pairs winning.
    pub fn merge_overrides(
        &self,
        overrides: &[(String, Value)],
    ) -> Result<ConfigDocument, ConfigError> {
        let mut doc = ConfigDocument {
            entries: self.entries.clone(),
            consumed: BTreeSet::new(),
        };
        for (key, value) in overrides {
            doc.insert(key.clone(), value.clone())?;
        }
        Ok(doc)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::Value::Object(
            self.entries
                .iter()
                .map(|(k, v)| (k.clone(), v.to_json()))
                .collect(),
        )
    }

    /// Pretty JSON, one entry per line, in document order.
    pub fn to_json_string(&self) -> String {
        if self.entries.is_empty() {
            return "{}\n".to_string();
        }
        let lines: Vec<String> = self
            .entries
            .iter()
            .map(|(k, v)| {
                let key = serde_json::to_string(k).expect("string keys serialize");
                format!("  {key}: {}", v.to_json())
            })
            .collect();
        format!("{{\n{}\n}}\n", lines.join(",\n"))
    }
}

/// A JSON object that refuses duplicate keys and keeps their order.
struct UniqueMap(IndexMap<String, serde_json::Value>);

impl<'de> Deserialize<'de> for UniqueMap {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct MapVisitor;

        impl<'de> Visitor<'de> for MapVisitor {
            type Value = UniqueMap;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<UniqueMap, A::Error> {
                let mut map = IndexMap::new();
                while let Some((key, value)) = access.next_entry::<String, serde_json::Value>()? {
                    if map.contains_key(&key) {
                        return Err(serde::de::Error::custom(format!("duplicate key '{key}'")));
                    }
                    map.insert(key, value);
                }
                Ok(UniqueMap(map))
            }
        }

        deserializer.deserialize_map(MapVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::ValueKind;

    pub(crate) const SINGLE_SEARCH: &str = r#"{
        "cls_task": "SingleSearchTask",
        "{cls_task}.save_dir": "{path_tmp}/",
        "{cls_task}.seed": 0,
        "{cls_task}.is_test_run": true,

        "cls_device": "CudaDevicesManager",
        "{cls_device}.num_devices": 1,

        "cls_trainer": "SimpleTrainer",
        "{cls_trainer}.max_epochs": 3,
        "{cls_trainer}.ema_decay": 0.5,
        "{cls_trainer}.ema_device": "cpu",

        "cls_exp_loggers": "TensorBoardExpLogger",
        "{cls_exp_loggers#0}.log_graph": false,

        "cls_callbacks": "CheckpointCallback",
        "{cls_callbacks#0}.top_n": 1,
        "{cls_callbacks#0}.key": "train/loss",
        "{cls_callbacks#0}.minimize_key": true
    }"#;

    fn int_arg(name: &str, default: i64) -> ArgumentSpec {
        ArgumentSpec::new(name, ValueKind::Integer, default, "")
    }

    #[test]
    fn parses_reference_document() {
        let doc = ConfigDocument::parse(SINGLE_SEARCH).unwrap();
        assert_eq!(doc.len(), 16);
        assert_eq!(
            doc.get("cls_task"),
            Some(&Value::Str("SingleSearchTask".into()))
        );
        assert_eq!(
            parse_key("cls_task").unwrap(),
            KeyForm::Selection {
                req_key: "cls_task".into()
            }
        );
        assert!(doc.consumed().is_empty());
        assert_eq!(doc.keys().next(), Some("cls_task"));
    }

    #[test]
    fn empty_and_broken_documents() {
        assert!(ConfigDocument::parse("{}").unwrap().is_empty());
        assert!(matches!(
            ConfigDocument::parse("{"),
            Err(ConfigError::Syntax(_))
        ));
        assert!(matches!(
            ConfigDocument::parse("[1]"),
            Err(ConfigError::Syntax(_))
        ));
        assert!(matches!(
            ConfigDocument::parse(r#"{"cls_a": "X", "cls_a": "Y"}"#),
            Err(ConfigError::Syntax(_))
        ));
        assert_eq!(
            ConfigDocument::parse(r#"{"cls_a": [1]}"#),
            Err(ConfigError::NonScalarValue("cls_a".into()))
        );
        assert!(matches!(
            ConfigDocument::parse(r#"{"cls_a": null}"#),
            Err(ConfigError::NonScalarValue(_))
        ));
        assert!(matches!(
            ConfigDocument::parse(r#"{"{cls_task.save_dir": 1}"#),
            Err(ConfigError::MalformedKey { .. })
        ));
    }

    #[test]
    fn key_forms() {
        assert_eq!(
            parse_key("{cls_callbacks#0}.top_n").unwrap(),
            KeyForm::WildcardArg {
                req_key: "cls_callbacks".into(),
                index: Some(0),
                arg: "top_n".into()
            }
        );
        assert_eq!(
            parse_key("SingleSearchTask.save_dir").unwrap(),
            KeyForm::ExplicitArg {
                class_name: "SingleSearchTask".into(),
                arg: "save_dir".into()
            }
        );
        for bad in [
            "task",
            "{task}.x",
            "{cls_a#}.x",
            "{cls_a#01}.x",
            "{cls_a#-1}.x",
            "{cls_a}x",
            "{cls_a}.",
            "A.b.c",
            "cls_a.x",
            "A .x",
            ".x",
            "cls_",
            "{cls_a}.x y",
        ] {
            assert!(parse_key(bad).is_err(), "{bad} should be rejected");
        }
        for key in ["cls_a", "{cls_a}.x", "{cls_a#12}.x", "A.x"] {
            assert_eq!(parse_key(key).unwrap().to_string(), key);
        }
    }

    #[test]
    fn used_classes() {
        let mut doc = ConfigDocument::from_entries([
            ("cls_callbacks", Value::from("CheckpointCallback")),
            (
                "cls_network_cells",
                Value::from("Bench201CNNSearchCell, Bench201ReductionCell"),
            ),
            ("cls_benchmark", Value::from("")),
        ])
        .unwrap();
        assert_eq!(
            doc.get_used_classes("cls_callbacks"),
            ["CheckpointCallback"]
        );
        assert_eq!(
            doc.get_used_classes("cls_network_cells"),
            ["Bench201CNNSearchCell", "Bench201ReductionCell"]
        );
        assert!(doc.get_used_classes("cls_benchmark").is_empty());
        assert!(doc.get_used_classes("cls_absent").is_empty());
        assert!(doc.unconsumed().is_empty());
    }

    #[test]
    fn value_precedence_and_defaults() {
        let mut doc = ConfigDocument::parse(SINGLE_SEARCH).unwrap();
        let max_epochs = int_arg("max_epochs", 10);
        assert_eq!(
            doc.get_used_value("cls_trainer", 0, "SimpleTrainer", &max_epochs),
            Ok(Value::Int(3))
        );
        assert!(doc.consumed().contains("{cls_trainer}.max_epochs"));
        // plain wildcard binds index 0 only
        assert_eq!(
            doc.get_used_value("cls_trainer", 1, "SimpleTrainer", &max_epochs),
            Ok(Value::Int(10))
        );

        let mut doc =
            ConfigDocument::from_entries([("cls_task", Value::from("SingleSearchTask"))]).unwrap();
        assert_eq!(
            doc.get_used_value("cls_task", 0, "SingleSearchTask", &int_arg("seed", 0)),
            Ok(Value::Int(0))
        );

        let mut doc =
            ConfigDocument::from_entries([("{cls_a#1}.x", Value::Int(5)), ("A.x", Value::Int(7))])
                .unwrap();
        assert_eq!(
            doc.get_used_value("cls_a", 0, "A", &int_arg("x", 0)),
            Ok(Value::Int(7))
        );
    }

    #[test]
    fn conflicting_notations_are_ambiguous() {
        let mut doc = ConfigDocument::from_entries([
            ("{cls_task}.seed", Value::Int(1)),
            ("SingleSearchTask.seed", Value::Int(2)),
        ])
        .unwrap();
        let seed = int_arg("seed", 0);
        let hits = doc.applicable_entries("cls_task", 0, "SingleSearchTask", "seed");
        let distinct: BTreeSet<String> = hits.iter().map(|(_, v)| v.to_string()).collect();
        assert!(distinct.len() > 1);
        assert!(matches!(
            doc.get_used_value("cls_task", 0, "SingleSearchTask", &seed),
            Err(ResolveError::AmbiguousValue(v)) if v.len() == 2
        ));
        assert!(doc.unconsumed().is_empty());
    }

    #[test]
    fn agreeing_notations_are_all_consumed() {
        let mut doc = ConfigDocument::from_entries([
            ("{cls_task}.seed", Value::Int(1)),
            ("SingleSearchTask.seed", Value::Int(1)),
        ])
        .unwrap();
        assert_eq!(
            doc.get_used_value("cls_task", 0, "SingleSearchTask", &int_arg("seed", 0)),
            Ok(Value::Int(1))
        );
        assert!(doc.unconsumed().is_empty());
    }

    #[test]
    fn coercion_errors_propagate() {
        let mut doc = ConfigDocument::from_entries([("{cls_a}.x", Value::from("many"))]).unwrap();
        assert!(matches!(
            doc.get_used_value("cls_a", 0, "A", &int_arg("x", 0)),
            Err(ResolveError::Coercion(_))
        ));
    }

    #[test]
    fn placeholders() {
        let env = Placeholders::from([("path_tmp".to_string(), "/tmp/argtree".to_string())]);
        assert_eq!(
            expand_placeholders("{path_tmp}/", &env).unwrap(),
            "/tmp/argtree/"
        );
        assert_eq!(expand_placeholders("plain", &env).unwrap(), "plain");
        assert_eq!(
            expand_placeholders("{cls_task}/x", &env).unwrap(),
            "{cls_task}/x"
        );
        assert_eq!(expand_placeholders("a{b c}{}{", &env).unwrap(), "a{b c}{}{");
        assert_eq!(
            expand_placeholders("{path_data}/set", &env),
            Err(ResolveError::UnknownPlaceholder("path_data".into()))
        );
        assert!(default_placeholders().contains_key("path_tmp"));
    }

    #[test]
    fn overrides_last_write_wins() {
        let doc = ConfigDocument::parse(SINGLE_SEARCH).unwrap();
        assert_eq!(doc.merge_overrides(&[]).unwrap(), doc);

        let overrides = vec![
            parse_override("{cls_trainer}.max_epochs=7").unwrap(),
            parse_override("{cls_trainer}.max_epochs=10").unwrap(),
            parse_override("cls_trainer=OtherTrainer").unwrap(),
        ];
        let mut merged = doc.merge_overrides(&overrides).unwrap();
        assert_eq!(merged.len(), doc.len());
        assert_eq!(
            merged.get_used_value(
                "cls_trainer",
                0,
                "SimpleTrainer",
                &int_arg("max_epochs", 10)
            ),
            Ok(Value::Int(10))
        );
        assert_eq!(merged.get_used_classes("cls_trainer"), ["OtherTrainer"]);
        assert!(doc
            .merge_overrides(&[("bad key".into(), Value::Int(1))])
            .is_err());
        assert!(matches!(
            parse_override("novalue"),
            Err(ConfigError::MalformedOverride(_))
        ));
        assert_eq!(
            parse_override("A.s=hello world").unwrap().1,
            Value::from("hello world")
        );
    }

    #[test]
    fn pretty_output_parses_back() {
        let doc = ConfigDocument::parse(SINGLE_SEARCH).unwrap();
        let again = ConfigDocument::parse(&doc.to_json_string()).unwrap();
        assert_eq!(again, doc);
        assert_eq!(ConfigDocument::new().to_json_string(), "{}\n");
    }
}
