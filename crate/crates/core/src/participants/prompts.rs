use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{ProfileKind, UserProfile};
use crate::assets;
use crate::schema::{AgentMode, DataModelInstance, DataSchema, FieldValue, UNCLEAR};

const AGENT_VARS: &[&str] = &["schema", "state", "guidelines"];
const USER_VARS: &[&str] = &["profile", "guidelines"];

pub const TEMPLATE_FILES: [&str; 4] = [
    "agent_one_shot.txt",
    "agent_adaptive.txt",
    "user_standard.txt",
    "user_ambiguous.txt",
];

const REPLY_FORMAT: &str = "### Reply format
Reply with one JSON object and nothing else:
{\"message\": \"<what you say to the user>\", \"data\": {\"<leaf path>\": <value>, ...}}
Include every leaf path of the data model in \"data\" on every turn. Use null for a
field not yet discussed and \"UNCLEAR\" for a field you marked as unclear.";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template {template}: unknown placeholder {{{{{name}}}}}")]
    UnknownPlaceholder { template: String, name: String },
    #[error("template {template}: unterminated placeholder")]
    Unterminated { template: String },
    #[error("cannot read template {path}: {reason}")]
    Io { path: String, reason: String },
}

/// System prompts for both agent modes and both user kinds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplateSet {
    pub agent_one_shot: String,
    pub agent_adaptive: String,
    pub user_standard: String,
    pub user_ambiguous: String,
}

impl PromptTemplateSet {
    pub fn builtin() -> Self {
        Self {
            agent_one_shot: assets::AGENT_ONE_SHOT.into(),
            agent_adaptive: assets::AGENT_ADAPTIVE.into(),
            user_standard: assets::USER_STANDARD.into(),
            user_ambiguous: assets::USER_AMBIGUOUS.into(),
        }
    }

    /// Reads the four template files from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| TemplateError::Io {
                path: path.display().to_string(),
                reason: e.to_string(),
            })
        };
        let set = Self {
            agent_one_shot: read(TEMPLATE_FILES[0])?,
            agent_adaptive: read(TEMPLATE_FILES[1])?,
            user_standard: read(TEMPLATE_FILES[2])?,
            user_ambiguous: read(TEMPLATE_FILES[3])?,
        };
        set.validate()?;
        Ok(set)
    }

    /// Checks that every placeholder can be resolved.
    pub fn validate(&self) -> Result<(), TemplateError> {
        let checks = [
            (TEMPLATE_FILES[0], &self.agent_one_shot, AGENT_VARS),
            (TEMPLATE_FILES[1], &self.agent_adaptive, AGENT_VARS),
            (TEMPLATE_FILES[2], &self.user_standard, USER_VARS),
            (TEMPLATE_FILES[3], &self.user_ambiguous, USER_VARS),
        ];
        for (name, text, vars) in checks {
            let dummy: Vec<(&str, &str)> = vars.iter().map(|v| (*v, "")).collect();
            fill(name, text, &dummy)?;
        }
        Ok(())
    }
}

/// Single-pass `{{name}}` substitution; substituted text is not rescanned.
fn fill(template_name: &str, text: &str, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let close = after.find("}}").ok_or_else(|| TemplateError::Unterminated {
            template: template_name.into(),
        })?;
        let name = after[..close].trim();
        let value = vars
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| TemplateError::UnknownPlaceholder {
                template: template_name.into(),
                name: name.into(),
            })?;
        out.push_str(value);
        rest = &after[close + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

fn schema_section(schema: &DataSchema) -> String {
    schema
        .leaf_specs()
        .iter()
        .map(|l| format!("- `{}`: {} ({})", l.path, l.label, l.kind.describe()))
        .collect::<Vec<_>>()
        .join("\n")
}

fn state_section(instance: &DataModelInstance) -> String {
    instance
        .iter()
        .map(|(path, v)| match v {
            FieldValue::Null => format!("- `{path}`: (empty)"),
            FieldValue::Unclear => format!("- `{path}`: {UNCLEAR}"),
            FieldValue::Filled(c) => format!("- `{path}`: {c}"),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_agent_prompt(
    templates: &PromptTemplateSet,
    schema: &DataSchema,
    instance: &DataModelInstance,
    mode: AgentMode,
) -> Result<String, TemplateError> {
    let (name, template) = match mode {
        AgentMode::OneShot => (TEMPLATE_FILES[0], &templates.agent_one_shot),
        AgentMode::Adaptive => (TEMPLATE_FILES[1], &templates.agent_adaptive),
    };
    fill(
        name,
        template,
        &[
            ("schema", &schema_section(schema)),
            ("state", &state_section(instance)),
            ("guidelines", REPLY_FORMAT),
        ],
    )
}

pub fn render_user_prompt(
    templates: &PromptTemplateSet,
    schema: &DataSchema,
    profile: &UserProfile,
) -> Result<String, TemplateError> {
    let gt = profile.ground_truth();
    let facts = schema
        .leaf_specs()
        .iter()
        .filter_map(|l| gt.expected(&l.path).map(|v| format!("- {}: {v}", l.label)))
        .collect::<Vec<_>>()
        .join("\n");
    let script = schema
        .leaf_specs()
        .iter()
        .filter_map(|l| {
            gt.ambiguity_script.get(&l.path).map(|s| {
                format!(
                    "- {}: first say \"{}\"; when asked to clarify, say \"{}\"",
                    l.label, s.vague, s.clarified
                )
            })
        })
        .collect::<Vec<_>>()
        .join("\n");
    let (name, template) = match profile.kind() {
        ProfileKind::Standard => (TEMPLATE_FILES[2], &templates.user_standard),
        ProfileKind::Ambiguous => (TEMPLATE_FILES[3], &templates.user_ambiguous),
    };
    fill(name, template, &[("profile", &facts), ("guidelines", &script)])
}
