use std::fmt;

use indexmap::IndexMap;
use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::{normalize, CanonicalValue, DataSchema, LeafKind, LeafPath, SchemaError, UNCLEAR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentMode {
    OneShot,
    Adaptive,
}

impl AgentMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentMode::OneShot => "one_shot",
            AgentMode::Adaptive => "adaptive",
        }
    }
}

impl fmt::Display for AgentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Fill state of one leaf.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum FieldValue {
    #[default]
    Null,
    Unclear,
    Filled(CanonicalValue),
}

impl FieldValue {
    pub fn is_filled(&self) -> bool {
        matches!(self, FieldValue::Filled(_))
    }
}

impl Serialize for FieldValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            FieldValue::Null => serializer.serialize_none(),
            FieldValue::Unclear => serializer.serialize_str(UNCLEAR),
            FieldValue::Filled(v) => serializer.serialize_str(v.as_str()),
        }
    }
}

impl<'de> Deserialize<'de> for FieldValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Ok(match Option::<String>::deserialize(deserializer)? {
            None => FieldValue::Null,
            Some(s) if s == UNCLEAR => FieldValue::Unclear,
            Some(s) => FieldValue::Filled(CanonicalValue::from_canonical(s)),
        })
    }
}

/// Per-run fill state: exactly one entry per schema leaf, in schema order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataModelInstance {
    pub schema: String,
    values: IndexMap<LeafPath, FieldValue>,
}

impl DataModelInstance {
    pub fn empty(schema: &DataSchema) -> Self {
        Self {
            schema: schema.name.clone(),
            values: schema
                .leaf_specs()
                .iter()
                .map(|l| (l.path.clone(), FieldValue::Null))
                .collect(),
        }
    }

    pub fn from_values(schema: impl Into<String>, values: IndexMap<LeafPath, FieldValue>) -> Self {
        Self {
            schema: schema.into(),
            values,
        }
    }

    pub fn get(&self, path: &LeafPath) -> Option<&FieldValue> {
        self.values.get(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&LeafPath, &FieldValue)> {
        self.values.iter()
    }

    pub fn values(&self) -> &IndexMap<LeafPath, FieldValue> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn count_filled(&self) -> usize {
        self.values.values().filter(|v| v.is_filled()).count()
    }

    pub fn count_unclear(&self) -> usize {
        self.values
            .values()
            .filter(|v| matches!(v, FieldValue::Unclear))
            .count()
    }

    pub fn count_null(&self) -> usize {
        self.values
            .values()
            .filter(|v| matches!(v, FieldValue::Null))
            .count()
    }

    /// Sets a leaf directly, bypassing transition rules. Test and replay use.
    pub fn set(&mut self, path: &LeafPath, value: FieldValue) -> bool {
        match self.values.get_mut(path) {
            Some(slot) => {
                *slot = value;
                true
            }
            None => false,
        }
    }

    /// Compact JSON rendering: `{leaf: value | "UNCLEAR" | null}` in leaf order.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("instance serialization is infallible")
    }

    /// Hex SHA-256 of [`Self::to_json`].
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

impl Serialize for DataModelInstance {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.values.len()))?;
        for (k, v) in &self.values {
            map.serialize_entry(&k.to_string(), v)?;
        }
        map.end()
    }
}

/// Deserializes the bare leaf map; the schema name is filled in by the caller.
impl<'de> Deserialize<'de> for DataModelInstance {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = IndexMap<LeafPath, FieldValue>;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map of leaf paths to values")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Self::Value, A::Error> {
                let mut out = IndexMap::new();
                while let Some((k, v)) = access.next_entry::<String, FieldValue>()? {
                    let path: LeafPath = k.parse().map_err(de::Error::custom)?;
                    if out.insert(path, v).is_some() {
                        return Err(de::Error::custom(format!("duplicate leaf {k}")));
                    }
                }
                Ok(out)
            }
        }
        Ok(DataModelInstance {
            schema: String::new(),
            values: deserializer.deserialize_map(V)?,
        })
    }
}

/// One proposed entry of an agent's snapshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SnapshotEntry {
    Value(String),
    Unclear,
    Null,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    UnknownLeaf,
    Unnormalizable,
    /// Attempt to move a leaf out of `Filled` or from `Unclear` back to `Null`.
    Regression,
    /// Attempt to replace a filled value with a different one.
    Overwrite,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub leaf: String,
    pub kind: ViolationKind,
    pub detail: String,
}

/// Applies an agent snapshot with monotonic fill transitions.
///
/// Allowed: `Null -> Filled`, `Null -> Unclear`, `Unclear -> Filled`.
/// Everything else that would change a leaf is refused and reported.
pub fn apply_snapshot<'a, I>(
    schema: &DataSchema,
    instance: &DataModelInstance,
    snapshot: I,
) -> (DataModelInstance, Vec<Violation>)
where
    I: IntoIterator<Item = (&'a str, &'a SnapshotEntry)>,
{
    let mut next = instance.clone();
    let mut violations = Vec::new();
    for (key, entry) in snapshot {
        let violation = |kind, detail: String| Violation {
            leaf: key.to_string(),
            kind,
            detail,
        };
        let Some(spec) = key.parse::<LeafPath>().ok().and_then(|p| schema.leaf(&p)) else {
            violations.push(violation(ViolationKind::UnknownLeaf, "not a schema leaf".into()));
            continue;
        };
        let current = next.values.get(&spec.path).cloned().unwrap_or_default();
        let proposed = match entry {
            SnapshotEntry::Null => FieldValue::Null,
            SnapshotEntry::Unclear => FieldValue::Unclear,
            SnapshotEntry::Value(raw) => match normalize(&spec.kind, raw) {
                Ok(v) => FieldValue::Filled(v),
                Err(e) => {
                    violations.push(violation(ViolationKind::Unnormalizable, e.to_string()));
                    continue;
                }
            },
        };
        let outcome = match (&current, &proposed) {
            (a, b) if a == b => Ok(None),
            (FieldValue::Null, _) => Ok(Some(proposed.clone())),
            (FieldValue::Unclear, FieldValue::Filled(_)) => Ok(Some(proposed.clone())),
            (FieldValue::Unclear, FieldValue::Null) => Err(ViolationKind::Regression),
            (FieldValue::Filled(_), FieldValue::Filled(_)) => Err(ViolationKind::Overwrite),
            (FieldValue::Filled(_), _) => Err(ViolationKind::Regression),
            (FieldValue::Unclear, FieldValue::Unclear) => unreachable!("equal states handled"),
        };
        match outcome {
            Ok(Some(v)) => {
                next.values.insert(spec.path.clone(), v);
            }
            Ok(None) => {}
            Err(kind) => violations.push(violation(
                kind,
                format!("{} -> {}", describe(&current), describe(&proposed)),
            )),
        }
    }
    (next, violations)
}

fn describe(v: &FieldValue) -> String {
    match v {
        FieldValue::Null => "null".into(),
        FieldValue::Unclear => UNCLEAR.into(),
        FieldValue::Filled(c) => format!("{:?}", c.as_str()),
    }
}

/// `one_shot` stops once nothing is `Null`; `adaptive` needs every leaf filled.
pub fn is_terminal(instance: &DataModelInstance, mode: AgentMode) -> bool {
    match mode {
        AgentMode::OneShot => instance.values.values().all(|v| !matches!(v, FieldValue::Null)),
        AgentMode::Adaptive => instance.values.values().all(FieldValue::is_filled),
    }
}

/// True iff `value` is filled with exactly the canonical `expected`.
pub fn compare_leaf(_kind: &LeafKind, value: &FieldValue, expected: &CanonicalValue) -> bool {
    matches!(value, FieldValue::Filled(v) if v == expected)
}

/// How the synthetic user dodges a leaf before committing to an answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedAmbiguity {
    pub vague: String,
    pub clarified: String,
}

/// Reference answers for every leaf, plus an optional ambiguity script.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthProfile {
    pub values: IndexMap<LeafPath, CanonicalValue>,
    pub ambiguity_script: IndexMap<LeafPath, ScriptedAmbiguity>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GroundTruthDoc {
    values: IndexMap<String, serde_json::Value>,
    #[serde(default)]
    ambiguity_script: IndexMap<String, ScriptedAmbiguity>,
}

impl GroundTruthProfile {
    /// Builds a profile and checks it against `schema`: every leaf has a
    /// valid value, and script keys name known leaves.
    pub fn new(
        schema: &DataSchema,
        values: IndexMap<LeafPath, CanonicalValue>,
        ambiguity_script: IndexMap<LeafPath, ScriptedAmbiguity>,
    ) -> Result<Self, SchemaError> {
        for path in values.keys().chain(ambiguity_script.keys()) {
            if schema.leaf(path).is_none() {
                return Err(SchemaError::UnknownLeaf(path.to_string()));
            }
        }
        let mut ordered = IndexMap::new();
        for leaf in schema.leaf_specs() {
            let v = values
                .get(&leaf.path)
                .ok_or_else(|| SchemaError::MissingLeaf(leaf.path.to_string()))?;
            let canon = normalize(&leaf.kind, v.as_str()).map_err(|source| SchemaError::BadValue {
                path: leaf.path.to_string(),
                source,
            })?;
            ordered.insert(leaf.path.clone(), canon);
        }
        let script = schema
            .leaf_specs()
            .iter()
            .filter_map(|l| ambiguity_script.get(&l.path).map(|s| (l.path.clone(), s.clone())))
            .collect();
        Ok(Self {
            values: ordered,
            ambiguity_script: script,
        })
    }

    pub fn load(source: &str, schema: &DataSchema) -> Result<Self, SchemaError> {
        let doc: GroundTruthDoc =
            serde_json::from_str(source).map_err(|e| SchemaError::Malformed(e.to_string()))?;
        let mut values = IndexMap::new();
        for (k, v) in doc.values {
            let path: LeafPath = k.parse()?;
            let spec = schema
                .leaf(&path)
                .ok_or_else(|| SchemaError::UnknownLeaf(k.clone()))?;
            let raw = match &v {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Number(n) => n.to_string(),
                serde_json::Value::Bool(b) => b.to_string(),
                other => {
                    return Err(SchemaError::Malformed(format!(
                        "leaf {k}: unsupported value {other}"
                    )))
                }
            };
            let canon = normalize(&spec.kind, &raw).map_err(|source| SchemaError::BadValue {
                path: k.clone(),
                source,
            })?;
            values.insert(path, canon);
        }
        let mut script = IndexMap::new();
        for (k, s) in doc.ambiguity_script {
            script.insert(k.parse::<LeafPath>()?, s);
        }
        Self::new(schema, values, script)
    }

    pub fn expected(&self, path: &LeafPath) -> Option<&CanonicalValue> {
        self.values.get(path)
    }

    /// Same values with the ambiguity script removed.
    pub fn without_script(&self) -> Self {
        Self {
            values: self.values.clone(),
            ambiguity_script: IndexMap::new(),
        }
    }
}
