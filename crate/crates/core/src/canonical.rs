//! Canonical JSON: UTF-8, keys sorted lexicographically at every
//! nesting level, no insignificant whitespace, single line.
//!
//! The manifest hash and the proof records file both depend on this
//! form. Sorting is done here explicitly rather than relying on the
//! map type underneath `serde_json::Value`, whose iteration order is a
//! crate feature another dependency could silently flip.

use serde::Serialize;
use serde_json::Value;

/// Canonical form of any JSON value.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, value);
    out
}

/// Canonical single-line JSON for any serializable value.
pub fn canonical_line<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    Ok(canonical_json(&serde_json::to_value(value)?))
}

fn write_value(out: &mut String, v: &Value) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(true) => out.push_str("true"),
        Value::Bool(false) => out.push_str("false"),
        Value::Number(n) => out.push_str(&n.to_string()),
        Value::String(s) => write_string(out, s),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(out, item);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_string(out, key);
                out.push(':');
                write_value(out, &map[*key]);
            }
            out.push('}');
        }
    }
}

fn write_string(out: &mut String, s: &str) {
    // serde_json's escaping rules, applied to a lone string
    out.push_str(&serde_json::to_string(s).expect("string serialization is infallible"));
}
