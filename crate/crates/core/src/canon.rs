//! Canonical JSON and hashing.
//!
//! Canonical form: UTF-8 JSON, object keys sorted ascending by code point, no
//! insignificant whitespace, integers in shortest decimal form, every string
//! (keys included) NFC-normalized. String escaping follows `serde_json`: only
//! `"`, `\` and control characters are escaped.
//!
//! If two keys of one object collapse to the same string after NFC, the entry
//! whose original key sorts first is kept.

use std::borrow::Cow;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use unicode_normalization::{is_nfc, UnicodeNormalization};

use crate::ids::HashDigest;

pub fn canonicalize(value: &Value) -> Vec<u8> {
    let mut out = Vec::with_capacity(256);
    write_value(value, &mut out);
    out
}

/// Serializes `value` through `serde_json::Value` and canonicalizes it.
///
/// Panics if `T`'s `Serialize` impl fails, which for the crate's own types
/// (string map keys only) cannot happen.
pub fn to_canonical_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let v = serde_json::to_value(value).expect("crate types serialize to JSON");
    canonicalize(&v)
}

pub fn sha256(bytes: &[u8]) -> HashDigest {
    HashDigest::from_bytes(Sha256::digest(bytes).into())
}

fn write_value(v: &Value, out: &mut Vec<u8>) {
    match v {
        Value::Null => out.extend_from_slice(b"null"),
        Value::Bool(true) => out.extend_from_slice(b"true"),
        Value::Bool(false) => out.extend_from_slice(b"false"),
        Value::Number(n) => out.extend_from_slice(n.to_string().as_bytes()),
        Value::String(s) => write_string(s, out),
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_value(item, out);
            }
            out.push(b']');
        }
        Value::Object(map) => {
            let mut entries: Vec<(Cow<'_, str>, &Value)> =
                map.iter().map(|(k, v)| (nfc(k), v)).collect();
            // Stable sort keeps the first of any NFC-colliding pair in front.
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            entries.dedup_by(|later, earlier| later.0 == earlier.0);
            out.push(b'{');
            for (i, (k, v)) in entries.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_escaped(k, out);
                out.push(b':');
                write_value(v, out);
            }
            out.push(b'}');
        }
    }
}

fn nfc(s: &str) -> Cow<'_, str> {
    if s.is_ascii() || is_nfc(s) {
        Cow::Borrowed(s)
    } else {
        Cow::Owned(s.nfc().collect())
    }
}

fn write_string(s: &str, out: &mut Vec<u8>) {
    write_escaped(&nfc(s), out);
}

fn write_escaped(s: &str, out: &mut Vec<u8>) {
    serde_json::to_writer(&mut *out, s).expect("string serialization is infallible");
}
