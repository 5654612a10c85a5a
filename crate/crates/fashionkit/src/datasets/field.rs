//! Field accessors for JSON-backed annotation documents. All failures are
//! data-validation errors naming the parent object and the field.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::json::Value;

pub(crate) fn as_map<'a>(v: &'a Value, what: &str) -> Result<&'a BTreeMap<String, Value>> {
    v.as_map()
        .ok_or_else(|| Error::Validation(format!("{what} must be a mapping, found {}", v.kind())))
}

pub(crate) fn req<'a>(m: &'a BTreeMap<String, Value>, key: &str, what: &str) -> Result<&'a Value> {
    m.get(key)
        .ok_or_else(|| Error::Validation(format!("{what} is missing \"{key}\"")))
}

pub(crate) fn req_i64(m: &BTreeMap<String, Value>, key: &str, what: &str) -> Result<i64> {
    req(m, key, what)?
        .as_i64()
        .ok_or_else(|| Error::Validation(format!("{what} field \"{key}\" must be an integer")))
}

pub(crate) fn req_u32(m: &BTreeMap<String, Value>, key: &str, what: &str) -> Result<u32> {
    let v = req_i64(m, key, what)?;
    u32::try_from(v).map_err(|_| {
        Error::Validation(format!("{what} field \"{key}\" must be a non-negative integer"))
    })
}

pub(crate) fn req_str<'a>(m: &'a BTreeMap<String, Value>, key: &str, what: &str) -> Result<&'a str> {
    req(m, key, what)?
        .as_str()
        .ok_or_else(|| Error::Validation(format!("{what} field \"{key}\" must be a string")))
}

pub(crate) fn req_bool(m: &BTreeMap<String, Value>, key: &str, what: &str) -> Result<bool> {
    req(m, key, what)?
        .as_bool()
        .ok_or_else(|| Error::Validation(format!("{what} field \"{key}\" must be a bool")))
}

pub(crate) fn req_list<'a>(
    m: &'a BTreeMap<String, Value>,
    key: &str,
    what: &str,
) -> Result<&'a [Value]> {
    req(m, key, what)?
        .as_list()
        .ok_or_else(|| Error::Validation(format!("{what} field \"{key}\" must be a list")))
}

pub(crate) fn str_list(m: &BTreeMap<String, Value>, key: &str, what: &str) -> Result<Vec<String>> {
    req_list(m, key, what)?
        .iter()
        .map(|v| {
            v.as_str().map(str::to_string).ok_or_else(|| {
                Error::Validation(format!("{what} field \"{key}\" must hold strings"))
            })
        })
        .collect()
}
