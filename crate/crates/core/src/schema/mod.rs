//! Declarative data models: the fields an agent must collect, flattened into
//! addressable leaves, plus per-run fill state and the ground truth.

mod instance;
mod normalize;
mod path;

use std::collections::HashSet;

use serde::Deserialize;
use thiserror::Error;

pub use instance::{
    apply_snapshot, compare_leaf, is_terminal, AgentMode, DataModelInstance, FieldValue,
    GroundTruthProfile, ScriptedAmbiguity, SnapshotEntry, Violation, ViolationKind,
};
pub use normalize::{normalize, CanonicalValue, LeafKind, NormalizeError, UNCLEAR};
pub use path::{LeafPath, Segment};

pub(crate) use normalize::option_key;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("schema has no fields")]
    Empty,
    #[error("duplicate field id {0:?}")]
    DuplicateId(String),
    #[error("invalid field id {0:?}")]
    InvalidId(String),
    #[error("field {id:?}: unknown kind {kind:?}")]
    UnknownKind { id: String, kind: String },
    #[error("field {0:?}: enum needs at least one option")]
    EmptyEnum(String),
    #[error("field {id:?}: duplicate enum option {option:?}")]
    DuplicateOption { id: String, option: String },
    #[error("field {0:?}: list max_len must be at least 1")]
    InvalidMaxLen(String),
    #[error("field {0:?}: list needs item_fields")]
    EmptyList(String),
    #[error("invalid leaf path {0:?}")]
    InvalidPath(String),
    #[error("unknown leaf {0}")]
    UnknownLeaf(String),
    #[error("ground truth is missing leaf {0}")]
    MissingLeaf(String),
    #[error("leaf {path}: {source}")]
    BadValue {
        path: String,
        #[source]
        source: NormalizeError,
    },
}

/// Declared kind of a top-level or nested field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldKind {
    Text,
    Integer,
    Decimal,
    Boolean,
    Date,
    Enum(Vec<String>),
    /// Two leaves: `amount` (decimal) and `currency`.
    Money,
    /// Repeated group expanded to exactly `max_len` slots.
    BoundedList {
        item_fields: Vec<FieldSpec>,
        max_len: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSpec {
    pub id: String,
    pub label: String,
    pub kind: FieldKind,
    pub required: bool,
}

/// A flattened slot with everything needed to ask for it and validate it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafSpec {
    pub path: LeafPath,
    pub label: String,
    pub kind: LeafKind,
    pub required: bool,
    /// Index into [`DataSchema::groups`].
    pub group: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKind {
    Scalar,
    Money,
    /// One entry of a bounded list.
    Entry,
}

/// Leaves that are asked for together: a scalar on its own, both halves of a
/// money field, or all items of one list entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafGroup {
    pub key: String,
    pub label: String,
    pub kind: GroupKind,
    pub leaves: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSchema {
    pub name: String,
    pub fields: Vec<FieldSpec>,
    leaves: Vec<LeafSpec>,
    groups: Vec<LeafGroup>,
}

impl DataSchema {
    pub fn new(name: impl Into<String>, fields: Vec<FieldSpec>) -> Result<Self, SchemaError> {
        if fields.is_empty() {
            return Err(SchemaError::Empty);
        }
        validate_fields(&fields)?;
        let mut flat = Flattener::default();
        for f in &fields {
            flat.field(f, &LeafPath::field(f.id.clone()), &f.label, None);
        }
        let mut seen = HashSet::new();
        for leaf in &flat.leaves {
            if !seen.insert(leaf.path.clone()) {
                return Err(SchemaError::DuplicateId(leaf.path.to_string()));
            }
        }
        Ok(Self {
            name: name.into(),
            fields,
            leaves: flat.leaves,
            groups: flat.groups,
        })
    }

    /// Flattened leaves in document order.
    pub fn leaf_specs(&self) -> &[LeafSpec] {
        &self.leaves
    }

    pub fn groups(&self) -> &[LeafGroup] {
        &self.groups
    }

    pub fn leaf(&self, path: &LeafPath) -> Option<&LeafSpec> {
        self.leaves.iter().find(|l| &l.path == path)
    }

    pub fn leaf_index(&self, path: &LeafPath) -> Option<usize> {
        self.leaves.iter().position(|l| &l.path == path)
    }

    pub fn group_leaves(&self, group: usize) -> impl Iterator<Item = &LeafSpec> {
        self.groups[group].leaves.iter().map(|&i| &self.leaves[i])
    }
}

/// Ordered leaf paths of a schema.
pub fn leaves(schema: &DataSchema) -> Vec<LeafPath> {
    schema.leaves.iter().map(|l| l.path.clone()).collect()
}

fn validate_fields(fields: &[FieldSpec]) -> Result<(), SchemaError> {
    let mut ids = HashSet::new();
    for f in fields {
        if !path::is_valid_id(&f.id) {
            return Err(SchemaError::InvalidId(f.id.clone()));
        }
        if !ids.insert(f.id.as_str()) {
            return Err(SchemaError::DuplicateId(f.id.clone()));
        }
        match &f.kind {
            FieldKind::Enum(options) => {
                if options.is_empty() {
                    return Err(SchemaError::EmptyEnum(f.id.clone()));
                }
                let mut keys = HashSet::new();
                for o in options {
                    let key = option_key(o);
                    if key.is_empty() || key.eq_ignore_ascii_case(UNCLEAR) || !keys.insert(key) {
                        return Err(SchemaError::DuplicateOption {
                            id: f.id.clone(),
                            option: o.clone(),
                        });
                    }
                }
            }
            FieldKind::BoundedList {
                item_fields,
                max_len,
            } => {
                if *max_len < 1 {
                    return Err(SchemaError::InvalidMaxLen(f.id.clone()));
                }
                if item_fields.is_empty() {
                    return Err(SchemaError::EmptyList(f.id.clone()));
                }
                validate_fields(item_fields)?;
            }
            _ => {}
        }
    }
    Ok(())
}

#[derive(Default)]
struct Flattener {
    leaves: Vec<LeafSpec>,
    groups: Vec<LeafGroup>,
}

impl Flattener {
    fn open_group(&mut self, key: &LeafPath, label: &str, kind: GroupKind) -> usize {
        self.groups.push(LeafGroup {
            key: key.to_string(),
            label: label.to_string(),
            kind,
            leaves: Vec::new(),
        });
        self.groups.len() - 1
    }

    fn push_leaf(&mut self, path: LeafPath, label: String, kind: LeafKind, required: bool, group: usize) {
        self.groups[group].leaves.push(self.leaves.len());
        self.leaves.push(LeafSpec {
            path,
            label,
            kind,
            required,
            group,
        });
    }

    /// `label` is the fully qualified label; `group` is the enclosing list
    /// entry, if any.
    fn field(&mut self, f: &FieldSpec, path: &LeafPath, label: &str, group: Option<usize>) {
        match &f.kind {
            FieldKind::Money => {
                let g = self.open_group(path, label, GroupKind::Money);
                self.push_leaf(path.child("amount"), format!("{label} amount"), LeafKind::Decimal, f.required, g);
                self.push_leaf(path.child("currency"), format!("{label} currency"), LeafKind::Currency, f.required, g);
            }
            FieldKind::BoundedList {
                item_fields,
                max_len,
            } => {
                for i in 0..*max_len {
                    let entry_path = path.index(i);
                    let entry_label = format!("{label} entry {}", i + 1);
                    let g = self.open_group(&entry_path, &entry_label, GroupKind::Entry);
                    for item in item_fields {
                        let item_label = format!("{entry_label} {}", item.label);
                        self.field(item, &entry_path.child(item.id.clone()), &item_label, Some(g));
                    }
                }
            }
            scalar => {
                let kind = leaf_kind(scalar, &f.id, &f.label);
                let g = match group {
                    Some(g) => g,
                    None => self.open_group(path, label, GroupKind::Scalar),
                };
                self.push_leaf(path.clone(), label.to_string(), kind, f.required, g);
            }
        }
    }
}

fn leaf_kind(kind: &FieldKind, id: &str, label: &str) -> LeafKind {
    let names = format!("{id} {label}").to_lowercase();
    match kind {
        FieldKind::Text if names.contains("postal") || names.contains("postcode") => {
            LeafKind::PostalCode
        }
        FieldKind::Text => LeafKind::Text,
        FieldKind::Integer if names.contains("phone") => LeafKind::Phone,
        FieldKind::Integer => LeafKind::Integer,
        FieldKind::Decimal => LeafKind::Decimal,
        FieldKind::Boolean => LeafKind::Boolean,
        FieldKind::Date => LeafKind::Date,
        FieldKind::Enum(options) => LeafKind::Enum(options.clone()),
        FieldKind::Money | FieldKind::BoundedList { .. } => unreachable!("compound kinds are expanded"),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaDoc {
    name: String,
    fields: Vec<FieldDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldDoc {
    id: String,
    label: String,
    kind: String,
    #[serde(default)]
    options: Option<Vec<String>>,
    #[serde(default)]
    max_len: Option<usize>,
    #[serde(default)]
    item_fields: Option<Vec<FieldDoc>>,
    #[serde(default = "default_required")]
    required: bool,
}

fn default_required() -> bool {
    true
}

fn field_from_doc(doc: FieldDoc) -> Result<FieldSpec, SchemaError> {
    let kind = match doc.kind.as_str() {
        "text" => FieldKind::Text,
        "integer" => FieldKind::Integer,
        "decimal" => FieldKind::Decimal,
        "boolean" => FieldKind::Boolean,
        "date" => FieldKind::Date,
        "money" => FieldKind::Money,
        "enum" => FieldKind::Enum(doc.options.unwrap_or_default()),
        "list" => FieldKind::BoundedList {
            item_fields: doc
                .item_fields
                .unwrap_or_default()
                .into_iter()
                .map(field_from_doc)
                .collect::<Result<_, _>>()?,
            max_len: doc.max_len.unwrap_or(0),
        },
        other => {
            return Err(SchemaError::UnknownKind {
                id: doc.id,
                kind: other.to_string(),
            })
        }
    };
    Ok(FieldSpec {
        id: doc.id,
        label: doc.label,
        kind,
        required: doc.required,
    })
}

/// Parses and validates a JSON schema document.
pub fn load_schema(source: &str) -> Result<DataSchema, SchemaError> {
    let doc: SchemaDoc =
        serde_json::from_str(source).map_err(|e| SchemaError::Malformed(e.to_string()))?;
    let fields = doc
        .fields
        .into_iter()
        .map(field_from_doc)
        .collect::<Result<Vec<_>, _>>()?;
    DataSchema::new(doc.name, fields)
}
