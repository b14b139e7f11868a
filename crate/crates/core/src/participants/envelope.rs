use indexmap::IndexMap;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::schema::{SnapshotEntry, UNCLEAR};

/// An agent turn: what the user sees plus the agent's full view of the data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplyEnvelope {
    pub message: String,
    /// Leaf path to proposed value. Keys are validated against the schema
    /// when the snapshot is applied, not here.
    pub snapshot: IndexMap<String, SnapshotEntry>,
}

impl ReplyEnvelope {
    pub fn entries(&self) -> impl Iterator<Item = (&str, &SnapshotEntry)> {
        self.snapshot.iter().map(|(k, v)| (k.as_str(), v))
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum EnvelopeError {
    #[error("no JSON object found in reply")]
    NoObject,
    #[error("reply object has no string \"message\"")]
    Message,
    #[error("reply object has no object \"data\"")]
    Data,
}

/// Renders the wire form `{"message": ..., "data": {...}}`.
pub fn render(envelope: &ReplyEnvelope) -> String {
    let data: Map<String, Value> = envelope
        .snapshot
        .iter()
        .map(|(k, v)| {
            let v = match v {
                SnapshotEntry::Value(s) => Value::String(s.clone()),
                SnapshotEntry::Unclear => Value::String(UNCLEAR.into()),
                SnapshotEntry::Null => Value::Null,
            };
            (k.clone(), v)
        })
        .collect();
    let mut obj = Map::new();
    obj.insert("message".into(), Value::String(envelope.message.clone()));
    obj.insert("data".into(), Value::Object(data));
    Value::Object(obj).to_string()
}

/// Extracts the first well-shaped envelope object from model output.
///
/// Code fences and surrounding prose are skipped. Nested objects and arrays
/// under `data` are flattened into leaf paths (`a.b`, `a[0].b`).
pub fn parse_envelope(raw: &str) -> Result<ReplyEnvelope, EnvelopeError> {
    let mut first_err = None;
    for (start, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Value>();
        let Some(Ok(Value::Object(obj))) = stream.next() else {
            continue;
        };
        match shape(obj) {
            Ok(env) => return Ok(env),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    Err(first_err.unwrap_or(EnvelopeError::NoObject))
}

fn shape(mut obj: Map<String, Value>) -> Result<ReplyEnvelope, EnvelopeError> {
    let Some(Value::String(message)) = obj.remove("message") else {
        return Err(EnvelopeError::Message);
    };
    let Some(Value::Object(data)) = obj.remove("data") else {
        return Err(EnvelopeError::Data);
    };
    let mut snapshot = IndexMap::new();
    for (k, v) in data {
        flatten(k, v, &mut snapshot);
    }
    Ok(ReplyEnvelope { message, snapshot })
}

fn flatten(key: String, value: Value, out: &mut IndexMap<String, SnapshotEntry>) {
    let entry = match value {
        Value::Null => SnapshotEntry::Null,
        Value::String(s) if s.trim().eq_ignore_ascii_case(UNCLEAR) => SnapshotEntry::Unclear,
        Value::String(s) => SnapshotEntry::Value(s),
        Value::Number(n) => SnapshotEntry::Value(n.to_string()),
        Value::Bool(b) => SnapshotEntry::Value(b.to_string()),
        Value::Object(map) => {
            for (k, v) in map {
                flatten(format!("{key}.{k}"), v, out);
            }
            return;
        }
        Value::Array(items) => {
            for (i, v) in items.into_iter().enumerate() {
                flatten(format!("{key}[{i}]"), v, out);
            }
            return;
        }
    };
    out.insert(key, entry);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry() -> impl Strategy<Value = SnapshotEntry> {
        prop_oneof![
            Just(SnapshotEntry::Null),
            Just(SnapshotEntry::Unclear),
            "[ -~]{0,12}"
                .prop_filter("reserved", |s| !s.trim().eq_ignore_ascii_case(UNCLEAR))
                .prop_map(SnapshotEntry::Value),
        ]
    }

    #[test]
    fn well_formed() {
        let env = parse_envelope(r#"{"message":"Thanks!","data":{"email":"a@b.c"}}"#).unwrap();
        assert_eq!(env.message, "Thanks!");
        assert_eq!(env.snapshot["email"], SnapshotEntry::Value("a@b.c".into()));
    }

    #[test]
    fn fenced_and_prose_wrapped() {
        let bare = r#"{"message":"Thanks!","data":{"email":"a@b.c"}}"#;
        let fenced = format!("```json\n{bare}\n```");
        let prose = format!("Sure {{not json}} here it is:\n{bare}\nHope that helps {{}}");
        assert_eq!(parse_envelope(&fenced).unwrap(), parse_envelope(bare).unwrap());
        assert_eq!(parse_envelope(&prose).unwrap(), parse_envelope(bare).unwrap());
    }

    #[test]
    fn rejects_brace_free_and_misshapen() {
        assert_eq!(parse_envelope("Sure, here you go"), Err(EnvelopeError::NoObject));
        assert_eq!(parse_envelope(r#"{"data":{}}"#), Err(EnvelopeError::Message));
        assert_eq!(parse_envelope(r#"{"message":"x","data":[1]}"#), Err(EnvelopeError::Data));
    }

    #[test]
    fn scalar_kinds_and_nesting() {
        let env = parse_envelope(
            r#"{"message":"m","data":{"n":60000,"b":false,"u":"unclear","z":null,
               "annual_income":{"amount":"60,000","currency":"USD"},
               "hist":[{"year":2023}]}}"#,
        )
        .unwrap();
        assert_eq!(env.snapshot["n"], SnapshotEntry::Value("60000".into()));
        assert_eq!(env.snapshot["b"], SnapshotEntry::Value("false".into()));
        assert_eq!(env.snapshot["u"], SnapshotEntry::Unclear);
        assert_eq!(env.snapshot["z"], SnapshotEntry::Null);
        assert_eq!(env.snapshot["annual_income.currency"], SnapshotEntry::Value("USD".into()));
        assert_eq!(env.snapshot["hist[0].year"], SnapshotEntry::Value("2023".into()));
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(
            message in "[ -~\n\u{e9}]{0,40}",
            data in proptest::collection::vec(("[a-z_]{1,8}(\\[[0-2]\\])?", entry()), 0..8),
        ) {
            let env = ReplyEnvelope { message, snapshot: data.into_iter().collect() };
            prop_assert_eq!(parse_envelope(&render(&env)).unwrap(), env);
        }
    }
}
