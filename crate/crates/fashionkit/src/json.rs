//! JSON document model shared by configs, annotation files, and metric
//! reports.
//!
//! The toolkit keeps every JSON document in one [`Value`] tree instead of a
//! serde struct graph. The tree makes three guarantees that the usual
//! derive path does not:
//!
//! * integers and floats stay distinct, so `2` never turns into `2.0` when
//!   a document is rewritten,
//! * duplicate sibling keys are a parse error with a 1-based line and
//!   column instead of a silent overwrite,
//! * maps are ordered, so serialization is byte-stable and independent of
//!   insertion order.
//!
//! Serialization offers two float styles: [`FloatStyle::Shortest`] emits
//! the shortest representation that round-trips (used for configs and
//! annotations), [`FloatStyle::Fixed`] emits a fixed number of decimals
//! (used for metric reports).

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// One JSON value. Maps are ordered by key.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<Value>),
    Map(BTreeMap<String, Value>),
}

impl Value {
    /// Human-readable kind name used in error messages.
    pub fn kind(&self) -> &'static str {
        match self {
            Value::Null => "null",
            Value::Bool(_) => "bool",
            Value::Int(_) => "integer",
            Value::Float(_) => "float",
            Value::Str(_) => "string",
            Value::List(_) => "list",
            Value::Map(_) => "mapping",
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int(n) => Some(*n),
            _ => None,
        }
    }

    /// Numeric accessor; integers widen to `f64`.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(n) => Some(*n as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Value]> {
        match self {
            Value::List(items) => Some(items),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&BTreeMap<String, Value>> {
        match self {
            Value::Map(m) => Some(m),
            _ => None,
        }
    }

    /// Builds a mapping from `(key, value)` pairs.
    pub fn map_from<K: Into<String>, V: Into<Value>>(pairs: Vec<(K, V)>) -> Value {
        Value::Map(
            pairs
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        )
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::Int(v as i64)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Str(v)
    }
}

impl From<Vec<Value>> for Value {
    fn from(v: Vec<Value>) -> Self {
        Value::List(v)
    }
}

/// Looks up a dotted path like `"model.head.num_attrs"`. List elements are
/// addressed by decimal index segments. Returns `None` when any segment is
/// missing or the wrong kind.
pub fn get_path<'a>(root: &'a Value, path: &str) -> Option<&'a Value> {
    let mut cur = root;
    for seg in path.split('.') {
        match cur {
            Value::Map(m) => cur = m.get(seg)?,
            Value::List(items) => {
                let idx: usize = seg.parse().ok()?;
                cur = items.get(idx)?;
            }
            _ => return None,
        }
    }
    Some(cur)
}

/// Parses a JSON document. `file` is only used in error messages.
pub fn parse_named(text: &str, file: &str) -> Result<Value> {
    let mut p = Parser {
        bytes: text.as_bytes(),
        pos: 0,
        line: 1,
        col: 1,
        depth: 0,
        file,
    };
    p.skip_ws();
    let value = p.parse_value()?;
    p.skip_ws();
    if p.pos < p.bytes.len() {
        return Err(p.err("trailing characters after document"));
    }
    Ok(value)
}

/// Parses a JSON document from a string.
pub fn parse(text: &str) -> Result<Value> {
    parse_named(text, "<string>")
}

const MAX_DEPTH: usize = 128;

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
    depth: usize,
    file: &'a str,
}

impl<'a> Parser<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Json {
            file: self.file.to_string(),
            line: self.line,
            column: self.col,
            message: message.into(),
        }
    }

    fn err_at(&self, line: usize, col: usize, message: impl Into<String>) -> Error {
        Error::Json {
            file: self.file.to_string(),
            line,
            column: col,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let b = self.peek()?;
        self.pos += 1;
        if b == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(b)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\n' | b'\r')) {
            self.bump();
        }
    }

    fn expect(&mut self, ch: u8) -> Result<()> {
        match self.peek() {
            Some(b) if b == ch => {
                self.bump();
                Ok(())
            }
            Some(b) => Err(self.err(format!("expected '{}', found '{}'", ch as char, b as char))),
            None => Err(self.err(format!("expected '{}', found end of input", ch as char))),
        }
    }

    fn parse_value(&mut self) -> Result<Value> {
        match self.peek() {
            None => Err(self.err("unexpected end of input")),
            Some(b'{') => self.parse_map(),
            Some(b'[') => self.parse_list(),
            Some(b'"') => Ok(Value::Str(self.parse_string()?)),
            Some(b't') => self.parse_keyword("true", Value::Bool(true)),
            Some(b'f') => self.parse_keyword("false", Value::Bool(false)),
            Some(b'n') => self.parse_keyword("null", Value::Null),
            Some(b'-' | b'0'..=b'9') => self.parse_number(),
            Some(b) => Err(self.err(format!("unexpected character '{}'", b as char))),
        }
    }

    fn parse_keyword(&mut self, word: &str, value: Value) -> Result<Value> {
        for &ch in word.as_bytes() {
            match self.peek() {
                Some(b) if b == ch => {
                    self.bump();
                }
                _ => return Err(self.err(format!("invalid literal, expected \"{word}\""))),
            }
        }
        Ok(value)
    }

    fn parse_map(&mut self) -> Result<Value> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(self.err("document nesting exceeds the depth limit"));
        }
        self.expect(b'{')?;
        let mut map = BTreeMap::new();
        self.skip_ws();
        if self.peek() == Some(b'}') {
            self.bump();
            self.depth -= 1;
            return Ok(Value::Map(map));
        }
        loop {
            self.skip_ws();
            let (key_line, key_col) = (self.line, self.col);
            if self.peek() != Some(b'"') {
                return Err(self.err("expected string key"));
            }
            let key = self.parse_string()?;
            if map.contains_key(&key) {
                return Err(self.err_at(key_line, key_col, format!("duplicate key \"{key}\"")));
            }
            self.skip_ws();
            self.expect(b':')?;
            self.skip_ws();
            let value = self.parse_value()?;
            map.insert(key, value);
            self.skip_ws();
            match self.peek() {
                Some(b',') => {
                    self.bump();
                }
                Some(b'}') => {
                    self.bump();
                    self.depth -= 1;
                    return Ok(Value::Map(map));
                }
                Some(b) => {
                    return Err(self.err(format!("expected ',' or '}}', found '{}'", b as char)))
                }
                None => return Err(self.err("unterminated object")),
            }
        }
    }

    fn parse_list(&mut self) -> Result<Value> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(self.err("document nesting exceeds the depth limit"));
        }
        self.expect(b'[')?;
        let mut items = Vec::new();
        self.skip_ws();
        if self.peek() == Some(b']') {
            self.bump();
            self.depth -= 1;
            return Ok(Value::List(items));
        }
        loop {
            self.skip_ws();
            items.push(self.parse_value()?);
            self.skip_ws();
            match self.peek() {
                Some(b',') => {
                    self.bump();
                }
                Some(b']') => {
                    self.bump();
                    self.depth -= 1;
                    return Ok(Value::List(items));
                }
                Some(b) => {
                    return Err(self.err(format!("expected ',' or ']', found '{}'", b as char)))
                }
                None => return Err(self.err("unterminated list")),
            }
        }
    }

    fn parse_string(&mut self) -> Result<String> {
        self.expect(b'"')?;
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err(self.err("unterminated string")),
                Some(b'"') => return Ok(out),
                Some(b'\\') => match self.bump() {
                    Some(b'"') => out.push('"'),
                    Some(b'\\') => out.push('\\'),
                    Some(b'/') => out.push('/'),
                    Some(b'b') => out.push('\u{0008}'),
                    Some(b'f') => out.push('\u{000C}'),
                    Some(b'n') => out.push('\n'),
                    Some(b'r') => out.push('\r'),
                    Some(b't') => out.push('\t'),
                    Some(b'u') => {
                        let hi = self.parse_hex4()?;
                        let ch = if (0xD800..0xDC00).contains(&hi) {
                            if self.bump() != Some(b'\\') || self.bump() != Some(b'u') {
                                return Err(self.err("unpaired surrogate escape"));
                            }
                            let lo = self.parse_hex4()?;
                            if !(0xDC00..0xE000).contains(&lo) {
                                return Err(self.err("invalid low surrogate"));
                            }
                            let c = 0x10000 + ((hi - 0xD800) << 10) + (lo - 0xDC00);
                            char::from_u32(c).ok_or_else(|| self.err("invalid surrogate pair"))?
                        } else if (0xDC00..0xE000).contains(&hi) {
                            return Err(self.err("unpaired surrogate escape"));
                        } else {
                            char::from_u32(hi).ok_or_else(|| self.err("invalid unicode escape"))?
                        };
                        out.push(ch);
                    }
                    Some(b) => return Err(self.err(format!("invalid escape '\\{}'", b as char))),
                    None => return Err(self.err("unterminated string")),
                },
                Some(b) if b < 0x20 => {
                    return Err(self.err("unescaped control character in string"))
                }
                Some(b) if b < 0x80 => out.push(b as char),
                Some(b) => {
                    // Re-decode the UTF-8 sequence that starts here.
                    let len = match b {
                        0xC0..=0xDF => 2,
                        0xE0..=0xEF => 3,
                        0xF0..=0xF7 => 4,
                        _ => return Err(self.err("invalid UTF-8 in string")),
                    };
                    let start = self.pos - 1;
                    for _ in 1..len {
                        self.bump().ok_or_else(|| self.err("invalid UTF-8 in string"))?;
                    }
                    let s = std::str::from_utf8(&self.bytes[start..start + len])
                        .map_err(|_| self.err("invalid UTF-8 in string"))?;
                    out.push_str(s);
                }
            }
        }
    }

    fn parse_hex4(&mut self) -> Result<u32> {
        let mut v = 0u32;
        for _ in 0..4 {
            let b = self.bump().ok_or_else(|| self.err("truncated unicode escape"))?;
            let d = (b as char)
                .to_digit(16)
                .ok_or_else(|| self.err("invalid unicode escape"))?;
            v = v * 16 + d;
        }
        Ok(v)
    }

    fn parse_number(&mut self) -> Result<Value> {
        let start = self.pos;
        if self.peek() == Some(b'-') {
            self.bump();
        }
        match self.peek() {
            Some(b'0') => {
                self.bump();
            }
            Some(b'1'..=b'9') => {
                while matches!(self.peek(), Some(b'0'..=b'9')) {
                    self.bump();
                }
            }
            _ => return Err(self.err("invalid number")),
        }
        let mut is_float = false;
        if self.peek() == Some(b'.') {
            is_float = true;
            self.bump();
            if !matches!(self.peek(), Some(b'0'..=b'9')) {
                return Err(self.err("invalid number: expected digit after '.'"));
            }
            while matches!(self.peek(), Some(b'0'..=b'9')) {
                self.bump();
            }
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            is_float = true;
            self.bump();
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.bump();
            }
            if !matches!(self.peek(), Some(b'0'..=b'9')) {
                return Err(self.err("invalid number: empty exponent"));
            }
            while matches!(self.peek(), Some(b'0'..=b'9')) {
                self.bump();
            }
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii number");
        if is_float {
            let f: f64 = text
                .parse()
                .map_err(|_| self.err(format!("invalid number \"{text}\"")))?;
            if !f.is_finite() {
                return Err(self.err(format!("number \"{text}\" overflows f64")));
            }
            Ok(Value::Float(f))
        } else {
            match text.parse::<i64>() {
                Ok(n) => Ok(Value::Int(n)),
                // Integer literal outside i64: keep the value as a float.
                Err(_) => {
                    let f: f64 = text
                        .parse()
                        .map_err(|_| self.err(format!("invalid number \"{text}\"")))?;
                    Ok(Value::Float(f))
                }
            }
        }
    }
}

/// How floats are rendered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FloatStyle {
    /// Shortest representation that parses back to the same value. A
    /// decimal point (or exponent) is always present so the value stays a
    /// float on re-parse.
    Shortest,
    /// Fixed number of decimals, e.g. `Fixed(6)` renders `0.5` as
    /// `0.500000`. Used for metric reports.
    Fixed(usize),
}

/// Serializes with two-space indentation, keys in sorted order.
pub fn to_string_pretty(value: &Value) -> Result<String> {
    to_string_styled(value, true, FloatStyle::Shortest)
}

/// Serializes without any whitespace, keys in sorted order.
pub fn to_string_compact(value: &Value) -> Result<String> {
    to_string_styled(value, false, FloatStyle::Shortest)
}

/// Serializer entry point with explicit layout and float style.
pub fn to_string_styled(value: &Value, pretty: bool, style: FloatStyle) -> Result<String> {
    let mut out = String::new();
    write_value(&mut out, value, pretty, style, 0)?;
    if pretty {
        out.push('\n');
    }
    Ok(out)
}

fn write_value(
    out: &mut String,
    value: &Value,
    pretty: bool,
    style: FloatStyle,
    indent: usize,
) -> Result<()> {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(true) => out.push_str("true"),
        Value::Bool(false) => out.push_str("false"),
        Value::Int(n) => out.push_str(&n.to_string()),
        Value::Float(f) => write_float(out, *f, style)?,
        Value::Str(s) => write_string(out, s),
        Value::List(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return Ok(());
            }
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                if pretty {
                    out.push('\n');
                    push_indent(out, indent + 1);
                }
                write_value(out, item, pretty, style, indent + 1)?;
            }
            if pretty {
                out.push('\n');
                push_indent(out, indent);
            }
            out.push(']');
        }
        Value::Map(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return Ok(());
            }
            out.push('{');
            for (i, (k, v)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                if pretty {
                    out.push('\n');
                    push_indent(out, indent + 1);
                }
                write_string(out, k);
                out.push(':');
                if pretty {
                    out.push(' ');
                }
                write_value(out, v, pretty, style, indent + 1)?;
            }
            if pretty {
                out.push('\n');
                push_indent(out, indent);
            }
            out.push('}');
        }
    }
    Ok(())
}

fn push_indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn write_float(out: &mut String, f: f64, style: FloatStyle) -> Result<()> {
    if !f.is_finite() {
        return Err(Error::Validation(
            "cannot serialize a non-finite number".to_string(),
        ));
    }
    match style {
        FloatStyle::Shortest => {
            // Display never uses exponent form, so 1e300 would expand to
            // 301 digits; take the shorter of the two exact renderings.
            let mut positional = f.to_string();
            if !positional.contains('.') {
                positional.push_str(".0");
            }
            let exponential = format!("{f:e}");
            let s = if exponential.len() < positional.len() {
                exponential
            } else {
                positional
            };
            out.push_str(&s);
        }
        FloatStyle::Fixed(decimals) => {
            use std::fmt::Write as _;
            write!(out, "{f:.decimals$}").expect("write to String");
        }
    }
    Ok(())
}

fn write_string(out: &mut String, s: &str) {
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            '\u{0008}' => out.push_str("\\b"),
            '\u{000C}' => out.push_str("\\f"),
            c if (c as u32) < 0x20 => {
                use std::fmt::Write as _;
                write!(out, "\\u{:04x}", c as u32).expect("write to String");
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_atoms() {
        assert_eq!(parse("null").unwrap(), Value::Null);
        assert_eq!(parse("true").unwrap(), Value::Bool(true));
        assert_eq!(parse("false").unwrap(), Value::Bool(false));
        assert_eq!(parse("42").unwrap(), Value::Int(42));
        assert_eq!(parse("-7").unwrap(), Value::Int(-7));
        assert_eq!(parse("\"hi\"").unwrap(), Value::Str("hi".into()));
    }

    #[test]
    fn integers_and_floats_stay_distinct() {
        assert_eq!(parse("2").unwrap(), Value::Int(2));
        assert_eq!(parse("2.0").unwrap(), Value::Float(2.0));
        assert_eq!(parse("2e0").unwrap(), Value::Float(2.0));
        assert_eq!(parse("-0.5").unwrap(), Value::Float(-0.5));
        assert_ne!(parse("2").unwrap(), parse("2.0").unwrap());
    }

    #[test]
    fn parses_nested_structures() {
        let v = parse(r#"{"a": [1, 2.5, "x"], "b": {"c": null}}"#).unwrap();
        let m = v.as_map().unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(
            m["a"].as_list().unwrap(),
            &[Value::Int(1), Value::Float(2.5), Value::Str("x".into())]
        );
        assert_eq!(get_path(&v, "b.c"), Some(&Value::Null));
        assert_eq!(get_path(&v, "a.1"), Some(&Value::Float(2.5)));
        assert_eq!(get_path(&v, "a.9"), None);
    }

    #[test]
    fn duplicate_key_is_an_error_with_position() {
        let text = "{\n  \"a\": 1,\n  \"a\": 2\n}";
        let err = parse(text).unwrap_err();
        match err {
            Error::Json { line, column, message, .. } => {
                assert_eq!(line, 3);
                assert_eq!(column, 3);
                assert!(message.contains("duplicate key \"a\""));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn syntax_error_carries_position() {
        let err = parse("{\"a\": [1, ]}").unwrap_err();
        match err {
            Error::Json { line, column, .. } => {
                assert_eq!(line, 1);
                assert_eq!(column, 11);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn rejects_trailing_characters() {
        assert!(parse("1 2").is_err());
        assert!(parse("{} x").is_err());
    }

    #[test]
    fn rejects_deep_nesting() {
        let text = "[".repeat(200) + &"]".repeat(200);
        assert!(parse(&text).is_err());
    }

    #[test]
    fn string_escapes_round_trip() {
        let cases = ["a\"b", "tab\there", "line\nbreak", "back\\slash", "Ünïcode ☃", "\u{0001}"];
        for case in cases {
            let v = Value::Str(case.to_string());
            let text = to_string_compact(&v).unwrap();
            assert_eq!(parse(&text).unwrap(), v, "case {case:?}");
        }
        assert_eq!(parse("\"\\u00e9\\ud83d\\ude00\"").unwrap(), Value::Str("é😀".into()));
    }

    #[test]
    fn serializes_sorted_and_stable() {
        let v = parse(r#"{"b": 1, "a": {"z": true, "m": [1.5, 2]}}"#).unwrap();
        assert_eq!(
            to_string_compact(&v).unwrap(),
            r#"{"a":{"m":[1.5,2],"z":true},"b":1}"#
        );
        let pretty = to_string_pretty(&v).unwrap();
        assert_eq!(
            pretty,
            "{\n  \"a\": {\n    \"m\": [\n      1.5,\n      2\n    ],\n    \"z\": true\n  },\n  \"b\": 1\n}\n"
        );
    }

    #[test]
    fn float_rendering_keeps_the_marker() {
        assert_eq!(to_string_compact(&Value::Float(2.0)).unwrap(), "2.0");
        assert_eq!(to_string_compact(&Value::Float(-0.0)).unwrap(), "-0.0");
        assert_eq!(to_string_compact(&Value::Float(1e300)).unwrap(), "1e300");
        assert_eq!(to_string_compact(&Value::Float(5e-324)).unwrap(), "5e-324");
        assert_eq!(to_string_compact(&Value::Float(0.1)).unwrap(), "0.1");
        assert!(to_string_compact(&Value::Float(f64::NAN)).is_err());
    }

    #[test]
    fn fixed_style_renders_six_decimals() {
        let v = Value::map_from(vec![("r", Value::Float(0.5)), ("n", Value::Int(3))]);
        assert_eq!(
            to_string_styled(&v, false, FloatStyle::Fixed(6)).unwrap(),
            r#"{"n":3,"r":0.500000}"#
        );
    }

    #[test]
    fn shortest_floats_round_trip() {
        for f in [0.1, 1.0 / 3.0, 6.02e23, 5e-324, f64::MAX, -1.25e-7] {
            let text = to_string_compact(&Value::Float(f)).unwrap();
            assert_eq!(parse(&text).unwrap(), Value::Float(f), "float {f}");
        }
    }

    #[test]
    fn huge_integer_literals_become_floats() {
        let v = parse("123456789012345678901234567890").unwrap();
        assert_eq!(v, Value::Float(1.2345678901234568e29));
    }
}
