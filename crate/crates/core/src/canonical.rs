//! Canonical JSON encoding.
//!
//! Objects are emitted with lexicographically sorted keys and no
//! insignificant whitespace. Binary values are carried as unpadded
//! base64url strings (see [`b64`]). Digests computed over these bytes are
//! reproducible across implementations.

use serde::{de::DeserializeOwned, Serialize};

/// Serialize `value` to canonical JSON bytes.
///
/// Struct fields are routed through [`serde_json::Value`], whose map type
/// keeps keys sorted.
pub fn to_vec<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let v = serde_json::to_value(value).expect("canonical value is always representable as JSON");
    serde_json::to_vec(&v).expect("serializing a JSON value cannot fail")
}

pub fn to_string<T: Serialize + ?Sized>(value: &T) -> String {
    String::from_utf8(to_vec(value)).expect("JSON output is UTF-8")
}

/// Sorted keys, indented; for reports meant to be read.
pub fn to_string_pretty<T: Serialize + ?Sized>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("canonical value is always representable as JSON");
    serde_json::to_string_pretty(&v).expect("serializing a JSON value cannot fail")
}

pub fn from_slice<T: DeserializeOwned>(bytes: &[u8]) -> serde_json::Result<T> {
    serde_json::from_slice(bytes)
}

pub fn b64_encode(bytes: &[u8]) -> String {
    use base64::Engine;
    base64::engine::general_purpose::URL_SAFE_NO_PAD.encode(bytes)
}

pub fn b64_decode(text: &str) -> Result<Vec<u8>, base64::DecodeError> {
    use base64::Engine;
    base64::engine::general_purpose::URL_SAFE_NO_PAD.decode(text)
}

/// `#[serde(with = "b64")]` for `Vec<u8>` fields.
pub mod b64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::b64_encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        super::b64_decode(&text).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Serialize;

    #[derive(Serialize)]
    struct Sample {
        zeta: u32,
        alpha: &'static str,
        mid: Vec<u8>,
    }

    #[test]
    fn keys_sorted_no_whitespace() {
        let s = Sample { zeta: 1, alpha: "a b", mid: vec![1, 2] };
        assert_eq!(to_string(&s), r#"{"alpha":"a b","mid":[1,2],"zeta":1}"#);
    }

    #[test]
    fn nested_maps_sorted() {
        let v = serde_json::json!({"b": {"y": 1, "x": 2}, "a": []});
        assert_eq!(to_string(&v), r#"{"a":[],"b":{"x":2,"y":1}}"#);
    }

    #[test]
    fn base64url_unpadded() {
        assert_eq!(b64_encode(&[0xfb, 0xff]), "-_8");
        assert_eq!(b64_decode("-_8").unwrap(), vec![0xfb, 0xff]);
    }
}
