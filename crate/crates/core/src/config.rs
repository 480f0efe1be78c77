//! Flat key-value configuration files.
//!
//! Two syntaxes are accepted. The native one is line oriented:
//!
//! ```text
//! # comment
//! n1 = 1
//! f1.fmin = 0.05
//! ```
//!
//! A JSON object is accepted too; nested objects are flattened with `.` so
//! `{"f1": {"fmin": 0.05}}` and `{"f1.fmin": 0.05}` are equivalent.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("invalid JSON config: {0}")]
    Json(String),
    #[error("JSON config must be an object of numbers, strings or booleans")]
    JsonShape,
    #[error("missing key `{0}`")]
    Missing(String),
    #[error("key `{key}`: cannot parse `{value}` as {expected}")]
    Type { key: String, value: String, expected: &'static str },
    #[error("cannot read config: {0}")]
    Io(String),
}

/// Parsed configuration: an ordered map of string keys to raw string values.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        if text.trim_start().starts_with('{') {
            Self::parse_json(text)
        } else {
            Self::parse_kv(text)
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    fn parse_kv(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || k.contains(char::is_whitespace) {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            let v = v.trim_matches('"');
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(ConfigError::Duplicate { line: i + 1, key: k.to_string() });
            }
        }
        Ok(Self { entries })
    }

    fn parse_json(text: &str) -> Result<Self, ConfigError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ConfigError::Json(e.to_string()))?;
        let mut entries = BTreeMap::new();
        flatten("", &value, &mut entries, 0)?;
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    /// Overlays `other` on top of `self`.
    pub fn merge(&mut self, other: &Config) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn raw(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key).ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    pub fn f64(&self, key: &str) -> Result<f64, ConfigError> {
        let v = self.raw(key)?;
        v.parse::<f64>().map_err(|_| ConfigError::Type {
            key: key.to_string(),
            value: v.to_string(),
            expected: "a number",
        })
    }

    pub fn usize(&self, key: &str) -> Result<usize, ConfigError> {
        let v = self.raw(key)?;
        v.parse::<usize>().map_err(|_| ConfigError::Type {
            key: key.to_string(),
            value: v.to_string(),
            expected: "a nonnegative integer",
        })
    }

    pub fn u64(&self, key: &str) -> Result<u64, ConfigError> {
        let v = self.raw(key)?;
        v.parse::<u64>().map_err(|_| ConfigError::Type {
            key: key.to_string(),
            value: v.to_string(),
            expected: "a nonnegative integer",
        })
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        if self.get(key).is_some() {
            self.f64(key)
        } else {
            Ok(default)
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        if self.get(key).is_some() {
            self.usize(key)
        } else {
            Ok(default)
        }
    }

    /// Comma separated list of numbers, e.g. `Ns = 50, 100, 200`.
    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        let v = self.raw(key)?;
        v.trim_matches(|c| c == '[' || c == ']')
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>().map_err(|_| ConfigError::Type {
                    key: key.to_string(),
                    value: v.to_string(),
                    expected: "a list of numbers",
                })
            })
            .collect()
    }

    /// Renders the native text form. Round-trips through [`Config::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

const MAX_DEPTH: usize = 8;

fn flatten(
    prefix: &str,
    value: &serde_json::Value,
    out: &mut BTreeMap<String, String>,
    depth: usize,
) -> Result<(), ConfigError> {
    use serde_json::Value;
    if depth > MAX_DEPTH {
        return Err(ConfigError::JsonShape);
    }
    match value {
        Value::Object(map) => {
            if depth > 0 && map.is_empty() {
                return Err(ConfigError::JsonShape);
            }
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out, depth + 1)?;
            }
            Ok(())
        }
        _ if depth == 0 => Err(ConfigError::JsonShape),
        Value::Number(n) => {
            out.insert(prefix.to_string(), n.to_string());
            Ok(())
        }
        Value::String(s) => {
            out.insert(prefix.to_string(), s.clone());
            Ok(())
        }
        Value::Bool(b) => {
            out.insert(prefix.to_string(), b.to_string());
            Ok(())
        }
        Value::Array(items) => {
            let mut parts = Vec::with_capacity(items.len());
            for item in items {
                match item {
                    Value::Number(n) => parts.push(n.to_string()),
                    _ => return Err(ConfigError::JsonShape),
                }
            }
            out.insert(prefix.to_string(), parts.join(","));
            Ok(())
        }
        Value::Null => Err(ConfigError::JsonShape),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_key_value_text() {
        let c = Config::parse("# header\nn1 = 1\n\nf1.fmin= 0.5 # trailing\nname = \"bench\"\n").unwrap();
        assert_eq!(c.usize("n1").unwrap(), 1);
        assert_eq!(c.f64("f1.fmin").unwrap(), 0.5);
        assert_eq!(c.get("name"), Some("bench"));
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn json_is_flattened() {
        let a = Config::parse(r#"{"n1": 1, "f1": {"fmin": 0.5, "slope": 2}}"#).unwrap();
        let b = Config::parse(r#"{"n1": 1, "f1.fmin": 0.5, "f1.slope": 2}"#).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.f64("f1.slope").unwrap(), 2.0);
    }

    #[test]
    fn lists() {
        let c = Config::parse("Ns = 50, 100,200\n").unwrap();
        assert_eq!(c.f64_list("Ns").unwrap(), vec![50.0, 100.0, 200.0]);
        let j = Config::parse(r#"{"Ns": [10, 20]}"#).unwrap();
        assert_eq!(j.f64_list("Ns").unwrap(), vec![10.0, 20.0]);
    }

    #[test]
    fn errors() {
        assert_eq!(Config::parse("n1 1").unwrap_err(), ConfigError::Syntax { line: 1 });
        assert!(matches!(Config::parse("a=1\na=2").unwrap_err(), ConfigError::Duplicate { line: 2, .. }));
        assert!(matches!(Config::parse("{\"a\": null}").unwrap_err(), ConfigError::JsonShape));
        assert!(matches!(Config::parse("{\"a\": ").unwrap_err(), ConfigError::Json(_)));
        let c = Config::parse("a = x").unwrap();
        assert!(matches!(c.f64("a"), Err(ConfigError::Type { .. })));
        assert!(matches!(c.f64("b"), Err(ConfigError::Missing(_))));
    }

    proptest! {
        #[test]
        fn text_round_trip(entries in proptest::collection::btree_map(
            "[a-z][a-z0-9_.]{0,8}", "[A-Za-z0-9_.+-]{1,10}", 0..12)) {
            let mut c = Config::default();
            for (k, v) in &entries {
                c.set(k.clone(), v);
            }
            prop_assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
        }

        #[test]
        fn never_panics(s in ".{0,200}") {
            let _ = Config::parse(&s);
        }
    }
}
