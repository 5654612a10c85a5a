//! Config loading, dotted-path access, override merging, and
//! fingerprinting.
//!
//! A [`Config`] wraps a validated [`Value`] tree whose root is a mapping.
//! Components never see raw files; everything that can be tuned arrives
//! through one of these trees. A typical experiment config looks like:
//!
//! ```text
//! {
//!   "task": "attribute",
//!   "seed": 7,
//!   "model": {
//!     "backbone": {"type": "TinyConv", "channels": [16, 32, 64, 128]},
//!     "head": {"type": "attribute", "num_attrs": 6, "pooling": "global"}
//!   },
//!   "data": {"root": "data/attr", "train": {...}, "val": {...}},
//!   "optimizer": {"lr": 0.05, "momentum": 0.9},
//!   "schedule": {"max_epochs": 40, "workflow": [["train", 1]]}
//! }
//! ```
//!
//! Validation at construction guarantees that keys are non-empty, keys do
//! not contain `.` (so dotted paths stay unambiguous), and floats are
//! finite. Every config that passes validation can be serialized, and the
//! serialized form is canonical: keys sorted, two-space indentation,
//! floats in shortest round-trip form. The [`Config::fingerprint`] is the
//! SHA-256 of that canonical form and is what checkpoints embed to detect
//! config drift.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::json::{self, Value};
use crate::util::sha256_hex;

/// A validated configuration tree. Immutable; merges produce new configs.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    root: Value,
}

impl Config {
    /// Wraps a value tree, enforcing the structural rules described at the
    /// module level.
    pub fn from_value(root: Value) -> Result<Config> {
        if !matches!(root, Value::Map(_)) {
            return Err(Error::Config(format!(
                "root must be a mapping, found {}",
                root.kind()
            )));
        }
        validate_tree(&root, "")?;
        Ok(Config { root })
    }

    /// Parses a config from JSON text. `name` is used in error positions.
    pub fn parse_str(text: &str, name: &str) -> Result<Config> {
        Config::from_value(json::parse_named(text, name)?)
    }

    /// Reads and parses a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Config> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse_str(&text, &path.display().to_string())
    }

    /// An empty config, useful as a merge base.
    pub fn empty() -> Config {
        Config {
            root: Value::Map(BTreeMap::new()),
        }
    }

    pub fn root(&self) -> &Value {
        &self.root
    }

    /// Canonical serialized form: sorted keys, two-space indent, shortest
    /// round-trip floats.
    pub fn serialize(&self) -> String {
        json::to_string_pretty(&self.root).expect("validated config serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.serialize()).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 hex digest of the canonical serialization. Two configs have
    /// equal fingerprints iff their trees are equal.
    pub fn fingerprint(&self) -> String {
        let compact = json::to_string_compact(&self.root).expect("validated config serializes");
        sha256_hex(compact.as_bytes())
    }

    /// Dotted-path lookup that errors when the path is absent.
    pub fn get(&self, path: &str) -> Result<&Value> {
        json::get_path(&self.root, path).ok_or_else(|| Error::MissingPath {
            path: path.to_string(),
        })
    }

    /// Dotted-path lookup that returns `None` when the path is absent.
    pub fn opt(&self, path: &str) -> Option<&Value> {
        json::get_path(&self.root, path)
    }

    pub fn get_bool(&self, path: &str) -> Result<bool> {
        self.get(path)?.as_bool().ok_or_else(|| wrong_type(path, "bool", self.get(path).unwrap()))
    }

    pub fn get_i64(&self, path: &str) -> Result<i64> {
        self.get(path)?.as_i64().ok_or_else(|| wrong_type(path, "integer", self.get(path).unwrap()))
    }

    pub fn get_usize(&self, path: &str) -> Result<usize> {
        let n = self.get_i64(path)?;
        usize::try_from(n).map_err(|_| Error::Config(format!("\"{path}\" must be non-negative, got {n}")))
    }

    /// Numeric accessor; integer values widen to `f64`.
    pub fn get_f64(&self, path: &str) -> Result<f64> {
        self.get(path)?.as_f64().ok_or_else(|| wrong_type(path, "number", self.get(path).unwrap()))
    }

    pub fn get_str(&self, path: &str) -> Result<&str> {
        self.get(path)?.as_str().ok_or_else(|| wrong_type(path, "string", self.get(path).unwrap()))
    }

    pub fn get_list(&self, path: &str) -> Result<&[Value]> {
        self.get(path)?.as_list().ok_or_else(|| wrong_type(path, "list", self.get(path).unwrap()))
    }

    /// Absent path falls back to `default`; a present value of the wrong
    /// kind is still an error.
    pub fn bool_or(&self, path: &str, default: bool) -> Result<bool> {
        match self.opt(path) {
            None => Ok(default),
            Some(_) => self.get_bool(path),
        }
    }

    pub fn i64_or(&self, path: &str, default: i64) -> Result<i64> {
        match self.opt(path) {
            None => Ok(default),
            Some(_) => self.get_i64(path),
        }
    }

    pub fn usize_or(&self, path: &str, default: usize) -> Result<usize> {
        match self.opt(path) {
            None => Ok(default),
            Some(_) => self.get_usize(path),
        }
    }

    pub fn f64_or(&self, path: &str, default: f64) -> Result<f64> {
        match self.opt(path) {
            None => Ok(default),
            Some(_) => self.get_f64(path),
        }
    }

    pub fn str_or<'a>(&'a self, path: &str, default: &'a str) -> Result<&'a str> {
        match self.opt(path) {
            None => Ok(default),
            Some(_) => self.get_str(path),
        }
    }

    /// Recursive merge. Mappings merge key by key, any other value in
    /// `overrides` replaces the base value, and a mapping meeting a
    /// non-mapping (in either direction) is an error that names the path.
    pub fn merged_with(&self, overrides: &Config) -> Result<Config> {
        let merged = merge_value("", &self.root, &overrides.root)?;
        Ok(Config { root: merged })
    }

    /// Builds an override config from `path=value` pairs as accepted on
    /// the command line. Values parse as JSON when they can (`3`, `0.5`,
    /// `true`, `[8,16]`) and fall back to bare strings otherwise.
    pub fn from_overrides(pairs: &[(String, String)]) -> Result<Config> {
        let mut root = Value::Map(BTreeMap::new());
        for (path, text) in pairs {
            if path.is_empty() || path.split('.').any(|seg| seg.is_empty()) {
                return Err(Error::Config(format!("invalid override path \"{path}\"")));
            }
            let value = match json::parse(text) {
                Ok(v) => v,
                Err(_) => Value::Str(text.clone()),
            };
            let nested = nest(path, value);
            root = merge_value("", &root, &nested)?;
        }
        Config::from_value(root)
    }
}

fn wrong_type(path: &str, expected: &'static str, found: &Value) -> Error {
    Error::WrongType {
        path: path.to_string(),
        expected,
        found: found.kind(),
    }
}

fn join_path(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn validate_tree(value: &Value, path: &str) -> Result<()> {
    match value {
        Value::Float(f) if !f.is_finite() => Err(Error::Config(format!(
            "non-finite number at \"{path}\""
        ))),
        Value::Map(map) => {
            for (k, v) in map {
                if k.is_empty() {
                    return Err(Error::Config(format!("empty key under \"{path}\"")));
                }
                if k.contains('.') {
                    return Err(Error::Config(format!(
                        "key \"{k}\" under \"{path}\" contains '.', which would be ambiguous in dotted paths"
                    )));
                }
                validate_tree(v, &join_path(path, k))?;
            }
            Ok(())
        }
        Value::List(items) => {
            for (i, v) in items.iter().enumerate() {
                validate_tree(v, &join_path(path, &i.to_string()))?;
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

fn merge_value(path: &str, base: &Value, over: &Value) -> Result<Value> {
    match (base, over) {
        (Value::Map(b), Value::Map(o)) => {
            let mut out = b.clone();
            for (k, ov) in o {
                let child_path = join_path(path, k);
                let merged = match b.get(k) {
                    Some(bv) => merge_value(&child_path, bv, ov)?,
                    None => ov.clone(),
                };
                out.insert(k.clone(), merged);
            }
            Ok(Value::Map(out))
        }
        (Value::Map(_), other) | (other, Value::Map(_)) => Err(Error::MergeConflict {
            path: path.to_string(),
            existing: if matches!(base, Value::Map(_)) { "mapping" } else { base.kind() },
            found: other.kind(),
        }),
        (_, _) => Ok(over.clone()),
    }
}

/// Wraps `value` into nested single-key maps following a dotted path.
fn nest(path: &str, value: Value) -> Value {
    let mut out = value;
    for seg in path.rsplit('.') {
        let mut m = BTreeMap::new();
        m.insert(seg.to_string(), out);
        out = Value::Map(m);
    }
    out
}

/// Errors when `node` holds keys outside `allowed`. Used by component
/// builders to reject config typos.
pub fn expect_keys(node: &Value, allowed: &[&str], what: &str) -> Result<()> {
    let map = node
        .as_map()
        .ok_or_else(|| Error::Config(format!("{what} config must be a mapping")))?;
    for key in map.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(Error::Config(format!(
                "{what}: unknown key \"{key}\" (allowed: {})",
                allowed.join(", ")
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> Config {
        Config::parse_str(text, "<test>").unwrap()
    }

    #[test]
    fn rejects_non_mapping_root() {
        assert!(Config::parse_str("[1, 2]", "<test>").is_err());
        assert!(Config::parse_str("3", "<test>").is_err());
    }

    #[test]
    fn rejects_bad_keys_and_values() {
        assert!(Config::parse_str(r#"{"": 1}"#, "<test>").is_err());
        assert!(Config::parse_str(r#"{"a.b": 1}"#, "<test>").is_err());
        assert!(Config::parse_str(r#"{"a": {"": 1}}"#, "<test>").is_err());
    }

    #[test]
    fn typed_access_and_defaults() {
        let c = cfg(r#"{"a": {"b": 3, "c": 0.5, "d": "x", "e": [1, 2], "f": true}}"#);
        assert_eq!(c.get_i64("a.b").unwrap(), 3);
        assert_eq!(c.get_f64("a.b").unwrap(), 3.0);
        assert_eq!(c.get_f64("a.c").unwrap(), 0.5);
        assert_eq!(c.get_str("a.d").unwrap(), "x");
        assert_eq!(c.get_list("a.e").unwrap().len(), 2);
        assert!(c.get_bool("a.f").unwrap());
        assert_eq!(c.f64_or("a.zz", 7.0).unwrap(), 7.0);
        assert!(c.get("a.zz").is_err());
        assert!(c.get_i64("a.d").is_err());
        assert!(c.i64_or("a.d", 0).is_err());
        assert!(c.get_usize("a.b").is_ok());
        assert!(cfg(r#"{"n": -1}"#).get_usize("n").is_err());
    }

    #[test]
    fn merge_is_recursive_and_type_checked() {
        let base = cfg(r#"{"model": {"lr": 0.1, "depth": 4}, "seed": 1}"#);
        let over = cfg(r#"{"model": {"lr": 0.01}, "tag": "x"}"#);
        let merged = base.merged_with(&over).unwrap();
        assert_eq!(merged.get_f64("model.lr").unwrap(), 0.01);
        assert_eq!(merged.get_i64("model.depth").unwrap(), 4);
        assert_eq!(merged.get_str("tag").unwrap(), "x");
        assert_eq!(merged.get_i64("seed").unwrap(), 1);

        let bad = cfg(r#"{"model": 3}"#);
        let err = base.merged_with(&bad).unwrap_err();
        match err {
            Error::MergeConflict { path, .. } => assert_eq!(path, "model"),
            other => panic!("unexpected error: {other}"),
        }
        // The reverse direction conflicts too.
        assert!(bad.merged_with(&base).is_err());
    }

    #[test]
    fn merge_does_not_mutate_inputs() {
        let base = cfg(r#"{"a": {"b": 1}}"#);
        let over = cfg(r#"{"a": {"c": 2}}"#);
        let snapshot = base.clone();
        let _ = base.merged_with(&over).unwrap();
        assert_eq!(base, snapshot);
    }

    #[test]
    fn overrides_parse_json_then_fall_back_to_strings() {
        let pairs = vec![
            ("optimizer.lr".to_string(), "0.5".to_string()),
            ("schedule.max_epochs".to_string(), "3".to_string()),
            ("data.root".to_string(), "runs/demo".to_string()),
            ("model.channels".to_string(), "[8,16]".to_string()),
        ];
        let c = Config::from_overrides(&pairs).unwrap();
        assert_eq!(c.get_f64("optimizer.lr").unwrap(), 0.5);
        assert_eq!(c.get_i64("schedule.max_epochs").unwrap(), 3);
        assert_eq!(c.get_str("data.root").unwrap(), "runs/demo");
        assert_eq!(c.get_list("model.channels").unwrap().len(), 2);
        assert!(Config::from_overrides(&[("a..b".to_string(), "1".to_string())]).is_err());
    }

    #[test]
    fn serialization_round_trips_and_fingerprint_tracks_content() {
        let c = cfg(r#"{"b": 2, "a": {"x": [1, 2.5], "y": "s"}, "n": null}"#);
        let text = c.serialize();
        let back = Config::parse_str(&text, "<round>").unwrap();
        assert_eq!(back, c);
        assert_eq!(back.fingerprint(), c.fingerprint());
        assert_eq!(c.fingerprint().len(), 64);

        let other = cfg(r#"{"b": 3}"#);
        assert_ne!(other.fingerprint(), c.fingerprint());
        // Key order in the source text must not matter.
        let reordered = cfg(r#"{"n": null, "a": {"y": "s", "x": [1, 2.5]}, "b": 2}"#);
        assert_eq!(reordered.fingerprint(), c.fingerprint());
    }

    #[test]
    fn expect_keys_flags_typos() {
        let c = cfg(r#"{"node": {"channels": [8], "chanels": [8]}}"#);
        let node = c.get("node").unwrap();
        let err = expect_keys(node, &["channels", "stages"], "backbone").unwrap_err();
        assert!(err.to_string().contains("chanels"));
    }
}
