//! String-keyed component registries.
//!
//! Pipelines are assembled from config trees: a node like
//! `{"type": "TinyConv", "channels": [16, 32]}` is resolved by looking up
//! `"TinyConv"` in a [`Registry`] and handing the remaining keys to the
//! registered builder. Unknown types report the full list of known names
//! so config typos are cheap to diagnose.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::json::Value;

type Builder<T> = Box<dyn Fn(&Value) -> Result<T> + Send + Sync>;

pub struct Registry<T> {
    name: String,
    entries: BTreeMap<String, Builder<T>>,
}

impl<T> Registry<T> {
    pub fn new(name: impl Into<String>) -> Self {
        Registry {
            name: name.into(),
            entries: BTreeMap::new(),
        }
    }

    /// Registers a builder under `key`. Double registration is an error;
    /// silently replacing a component would make configs mean different
    /// things depending on registration order.
    pub fn register<F>(&mut self, key: impl Into<String>, builder: F) -> Result<()>
    where
        F: Fn(&Value) -> Result<T> + Send + Sync + 'static,
    {
        let key = key.into();
        if self.entries.contains_key(&key) {
            return Err(Error::DuplicateEntry {
                registry: self.name.clone(),
                key,
            });
        }
        self.entries.insert(key, Box::new(builder));
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Registered names in sorted order.
    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(|k| k.as_str()).collect()
    }

    /// Builds a component from a config node of the form
    /// `{"type": <key>, ...options}`. The builder receives the node with
    /// the `type` key removed and must not mutate it (it gets a copy).
    pub fn build(&self, node: &Value) -> Result<T> {
        let map = node.as_map().ok_or_else(|| {
            Error::Config(format!(
                "{} component config must be a mapping, found {}",
                self.name,
                node.kind()
            ))
        })?;
        let type_value = map.get("type").ok_or_else(|| {
            Error::Config(format!("{} component config is missing \"type\"", self.name))
        })?;
        let key = type_value.as_str().ok_or_else(|| {
            Error::Config(format!(
                "{} component \"type\" must be a string, found {}",
                self.name,
                type_value.kind()
            ))
        })?;
        let builder = self.entries.get(key).ok_or_else(|| Error::UnknownType {
            registry: self.name.clone(),
            key: key.to_string(),
            known: self.names().join(", "),
        })?;
        let mut rest = map.clone();
        rest.remove("type");
        builder(&Value::Map(rest))
    }
}

impl<T> std::fmt::Debug for Registry<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry")
            .field("name", &self.name)
            .field("entries", &self.names())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::json;

    fn node(text: &str) -> Value {
        json::parse(text).unwrap()
    }

    #[test]
    fn builds_from_type_key() {
        let mut reg: Registry<i64> = Registry::new("numbers");
        reg.register("double", |n| Ok(2 * n.as_map().unwrap()["x"].as_i64().unwrap()))
            .unwrap();
        let built = reg.build(&node(r#"{"type": "double", "x": 21}"#)).unwrap();
        assert_eq!(built, 42);
    }

    #[test]
    fn duplicate_registration_is_an_error() {
        let mut reg: Registry<()> = Registry::new("things");
        reg.register("a", |_| Ok(())).unwrap();
        let err = reg.register("a", |_| Ok(())).unwrap_err();
        assert!(matches!(err, Error::DuplicateEntry { .. }));
    }

    #[test]
    fn unknown_type_lists_known_names() {
        let mut reg: Registry<()> = Registry::new("heads");
        reg.register("attribute", |_| Ok(())).unwrap();
        reg.register("landmark", |_| Ok(())).unwrap();
        let err = reg.build(&node(r#"{"type": "atribute"}"#)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("atribute"));
        assert!(msg.contains("attribute, landmark"));
    }

    #[test]
    fn missing_or_bad_type_key() {
        let reg: Registry<()> = Registry::new("heads");
        assert!(reg.build(&node(r#"{"x": 1}"#)).is_err());
        assert!(reg.build(&node(r#"{"type": 3}"#)).is_err());
        assert!(reg.build(&node("[1]")).is_err());
    }

    #[test]
    fn builder_sees_node_without_type() {
        let mut reg: Registry<usize> = Registry::new("counters");
        reg.register("count", |n| Ok(n.as_map().unwrap().len())).unwrap();
        let built = reg.build(&node(r#"{"type": "count", "a": 1, "b": 2}"#)).unwrap();
        assert_eq!(built, 2);
    }
}
