//! Pulling structured objects out of free-form model replies.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer};
use serde_json::Value;

/// The first JSON object in `raw` that deserializes as `T`. Surrounding prose,
/// code fences and unrelated objects are skipped.
pub fn find_object<T: DeserializeOwned>(raw: &str) -> Option<T> {
    raw.match_indices('{').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(v @ Value::Object(_))) => serde_json::from_value(v).ok(),
            _ => None,
        }
    })
}

/// Accepts a string, number or boolean and keeps its text form; models often
/// emit numeric answers unquoted.
pub fn scalar_text<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    match Value::deserialize(d)? {
        Value::String(s) => Ok(s),
        v @ (Value::Number(_) | Value::Bool(_)) => Ok(v.to_string()),
        other => Err(serde::de::Error::custom(format!(
            "expected a scalar, found {other}"
        ))),
    }
}
