//! Deterministic participants built on fixed question and answer templates.
//!
//! The agent asks one leaf group per turn and recognises answers by exact
//! template matching; the user answers from its ground truth, dodging
//! scripted leaves on the first ask. Neither side does any language
//! understanding, so a scripted pair is an exact oracle for the metrics.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{agent_message, Agent, AgentReply, ReplyEnvelope, StepError, SyntheticUser, TurnContext, UserProfile};
use crate::schema::{
    normalize, AgentMode, CanonicalValue, DataSchema, FieldValue, GroupKind, LeafGroup, LeafKind,
    LeafSpec, SnapshotEntry,
};
use crate::transcript::{Role, Transcript, OPENER};

pub const CLOSING: &str = "Thank you, I have all the information I need.";
pub const REPHRASE_REQUEST: &str = "Could you rephrase?";

const GREETING: &str = "Hello! Let's get started. ";
const ACK: &str = "Thank you. ";
const NOTED: &str = "Thank you, I've noted that. ";
const REASK: &str = "Let me rephrase. ";

/// Label of a list-entry leaf without its entry prefix, e.g. "year".
fn item_label<'a>(group: &LeafGroup, leaf: &'a LeafSpec) -> &'a str {
    leaf.label
        .strip_prefix(group.label.as_str())
        .map(str::trim_start)
        .filter(|s| !s.is_empty())
        .unwrap_or(&leaf.label)
}

pub fn ask_question(schema: &DataSchema, group: usize) -> String {
    let g = &schema.groups()[group];
    match g.kind {
        GroupKind::Scalar => format!("Could you please provide your {}?", g.label),
        GroupKind::Money => format!("Could you please provide your {} and the currency?", g.label),
        GroupKind::Entry => {
            let items: Vec<&str> = schema.group_leaves(group).map(|l| item_label(g, l)).collect();
            format!("Could you please provide your {} ({})?", g.label, items.join(", "))
        }
    }
}

pub fn follow_up_question(schema: &DataSchema, group: usize) -> String {
    let g = &schema.groups()[group];
    match g.kind {
        GroupKind::Scalar => format!("Could you please specify your exact {}?", g.label),
        GroupKind::Money => format!("Could you please specify the exact {} and the currency?", g.label),
        GroupKind::Entry => format!("Could you please specify the exact details of your {}?", g.label),
    }
}

pub fn answer_line(label: &str, value: &str) -> String {
    format!("My {label} is {value}.")
}

pub fn money_answer_line(label: &str, amount: &str, currency: &str) -> String {
    format!("My {label} is {amount} {currency}.")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Context {
    Ask,
    FollowUp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Pending {
    group: usize,
    context: Context,
    reasked: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Resolved,
    Vague,
    Unrecognized,
}

struct Interpretation {
    fills: Vec<(usize, String, CanonicalValue)>,
    unresolved: Vec<usize>,
    status: Status,
}

/// Scripted data-capture agent: one leaf group per turn, in schema order.
#[derive(Debug, Default)]
pub struct ScriptedAgent {
    pending: Option<Pending>,
}

impl ScriptedAgent {
    pub fn new() -> Self {
        Self::default()
    }
}

fn template_value<'a>(line: &'a str, prefix: &str) -> Option<&'a str> {
    let v = line.strip_prefix(prefix)?.strip_suffix('.')?.trim();
    (!v.is_empty()).then_some(v)
}

fn valid(kind: &LeafKind, raw: &str) -> Option<CanonicalValue> {
    normalize(kind, raw).ok()
}

fn interpret(
    schema: &DataSchema,
    group: usize,
    pending: &[usize],
    text: &str,
    context: Context,
) -> Interpretation {
    let g = &schema.groups()[group];
    let specs = schema.leaf_specs();
    let money_prefix = format!("My {} is ", g.label);
    let mut matched: HashMap<usize, String> = HashMap::new();
    let mut leftover = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if g.kind == GroupKind::Money {
            if let Some((amount, currency)) =
                template_value(line, &money_prefix).and_then(|v| v.rsplit_once(char::is_whitespace))
            {
                matched.insert(g.leaves[0], amount.trim().to_string());
                matched.insert(g.leaves[1], currency.trim().to_string());
                continue;
            }
        }
        let hit = g.leaves.iter().find_map(|&i| {
            template_value(line, &format!("My {} is ", specs[i].label)).map(|v| (i, v))
        });
        match hit {
            Some((i, v)) => {
                matched.insert(i, v.to_string());
            }
            None => leftover.push(line),
        }
    }

    let mut fills = Vec::new();
    let mut unresolved = Vec::new();
    for &i in pending {
        match matched.get(&i).and_then(|v| valid(&specs[i].kind, v).map(|c| (v.clone(), c))) {
            Some((raw, canon)) => fills.push((i, raw, canon)),
            None => unresolved.push(i),
        }
    }
    let status = if unresolved.is_empty() {
        Status::Resolved
    } else if leftover.last().is_none_or(|l| l.ends_with('?')) {
        Status::Unrecognized
    } else if context == Context::FollowUp {
        match bare_values(specs, &unresolved, &leftover) {
            Some(extra) => {
                fills.extend(extra);
                unresolved.clear();
                Status::Resolved
            }
            None => Status::Vague,
        }
    } else {
        Status::Vague
    };
    Interpretation {
        fills,
        unresolved,
        status,
    }
}

/// Reads untemplated clarifications: one value per line, the whole text for
/// a single leaf, or "amount currency" style tokens on one line.
fn bare_values(
    specs: &[LeafSpec],
    unresolved: &[usize],
    leftover: &[&str],
) -> Option<Vec<(usize, String, CanonicalValue)>> {
    let lines: Vec<&str> = leftover
        .iter()
        .map(|l| l.strip_suffix('.').unwrap_or(l).trim())
        .collect();
    let values: Vec<String> = if lines.len() == unresolved.len() {
        lines.iter().map(|s| s.to_string()).collect()
    } else if unresolved.len() == 1 {
        vec![lines.join(" ")]
    } else if lines.len() == 1 {
        let tokens: Vec<&str> = lines[0].split_whitespace().collect();
        if tokens.len() < unresolved.len() {
            return None;
        }
        let head = tokens.len() - (unresolved.len() - 1);
        std::iter::once(tokens[..head].join(" "))
            .chain(tokens[head..].iter().map(|t| t.to_string()))
            .collect()
    } else {
        return None;
    };
    unresolved
        .iter()
        .zip(values)
        .map(|(&i, v)| valid(&specs[i].kind, &v).map(|c| (i, v, c)))
        .collect()
}

fn select(schema: &DataSchema, view: &[FieldValue], mode: AgentMode) -> Option<Pending> {
    let first = |pred: &dyn Fn(&FieldValue) -> bool| {
        schema
            .groups()
            .iter()
            .position(|g| g.leaves.iter().any(|&i| pred(&view[i])))
    };
    let ask = |group, context| Pending {
        group,
        context,
        reasked: false,
    };
    first(&|v| matches!(v, FieldValue::Null))
        .map(|g| ask(g, Context::Ask))
        .or_else(|| match mode {
            AgentMode::Adaptive => first(&|v| matches!(v, FieldValue::Unclear)).map(|g| ask(g, Context::FollowUp)),
            AgentMode::OneShot => None,
        })
}

impl Agent for ScriptedAgent {
    fn reply(&mut self, ctx: &TurnContext<'_>) -> Result<AgentReply, StepError> {
        let last = ctx
            .transcript
            .last()
            .filter(|t| t.role == Role::User)
            .ok_or_else(|| StepError::Precondition("agent must answer a user turn".into()))?;
        let schema = ctx.schema;
        let specs = schema.leaf_specs();
        let mut view: Vec<FieldValue> = specs
            .iter()
            .map(|l| ctx.instance.get(&l.path).cloned().unwrap_or_default())
            .collect();
        let mut raw: Vec<Option<String>> = vec![None; specs.len()];
        let mut prefix = if ctx.transcript.len() == 1 { GREETING } else { ACK };
        let mut next = None;

        if let Some(p) = self.pending.take() {
            let pending: Vec<usize> = schema.groups()[p.group]
                .leaves
                .iter()
                .copied()
                .filter(|&i| !view[i].is_filled())
                .collect();
            let r = interpret(schema, p.group, &pending, &last.content, p.context);
            for (i, value, canon) in r.fills {
                view[i] = FieldValue::Filled(canon);
                raw[i] = Some(value);
            }
            if !r.unresolved.is_empty() {
                match (ctx.mode, r.status, p.context, p.reasked) {
                    (AgentMode::Adaptive, Status::Vague, Context::Ask, _) => {
                        next = Some(Pending {
                            group: p.group,
                            context: Context::FollowUp,
                            reasked: false,
                        });
                    }
                    (AgentMode::Adaptive, Status::Unrecognized, context, false) => {
                        next = Some(Pending {
                            reasked: true,
                            context,
                            ..p
                        });
                        prefix = REASK;
                    }
                    _ => {
                        for &i in &r.unresolved {
                            view[i] = FieldValue::Unclear;
                        }
                        prefix = NOTED;
                    }
                }
            }
        }

        let next = next.or_else(|| select(schema, &view, ctx.mode));
        let message = match next {
            Some(p) => {
                let q = match p.context {
                    Context::Ask => ask_question(schema, p.group),
                    Context::FollowUp => follow_up_question(schema, p.group),
                };
                format!("{prefix}{q}")
            }
            None => CLOSING.to_string(),
        };
        let snapshot = specs
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let entry = match (&raw[i], &view[i]) {
                    (Some(r), _) => SnapshotEntry::Value(r.clone()),
                    (None, FieldValue::Filled(c)) => SnapshotEntry::Value(c.as_str().to_string()),
                    (None, FieldValue::Unclear) => SnapshotEntry::Unclear,
                    (None, FieldValue::Null) => SnapshotEntry::Null,
                };
                (l.path.to_string(), entry)
            })
            .collect();
        self.pending = next;
        Ok(AgentReply {
            envelope: ReplyEnvelope { message, snapshot },
            failed_attempts: 0,
        })
    }
}

/// Scripted synthetic user answering from a ground-truth profile.
///
/// The seed only varies surface rendering (separators, date order, casing);
/// every rendering normalizes back to the ground-truth value.
pub struct ScriptedUser {
    schema: Arc<DataSchema>,
    profile: Arc<UserProfile>,
    rng: ChaCha8Rng,
    asks: Vec<u32>,
    /// Ask and follow-up questions, longest first.
    questions: Vec<(String, usize)>,
}

impl ScriptedUser {
    pub fn new(schema: Arc<DataSchema>, profile: Arc<UserProfile>, seed: u64) -> Self {
        let mut questions: Vec<(String, usize)> = (0..schema.groups().len())
            .flat_map(|g| [(ask_question(&schema, g), g), (follow_up_question(&schema, g), g)])
            .collect();
        questions.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.1.cmp(&b.1)));
        Self {
            asks: vec![0; schema.groups().len()],
            schema,
            profile,
            rng: ChaCha8Rng::seed_from_u64(seed),
            questions,
        }
    }

    fn exact(&mut self, spec: &LeafSpec) -> String {
        let truth = self.profile.ground_truth().values[&spec.path].clone();
        render_value(&spec.kind, truth.as_str(), &mut self.rng)
    }

    fn answer(&mut self, group: usize) -> String {
        self.asks[group] += 1;
        let count = self.asks[group];
        let schema = self.schema.clone();
        let g = &schema.groups()[group];
        let leaves: Vec<&LeafSpec> = schema.group_leaves(group).collect();
        let profile = self.profile.clone();
        let script = &profile.ground_truth().ambiguity_script;
        let scripted = leaves.iter().any(|l| script.contains_key(&l.path));

        if !scripted && g.kind == GroupKind::Money {
            let amount = self.exact(leaves[0]);
            let currency = self.exact(leaves[1]);
            return money_answer_line(&g.label, &amount, &currency);
        }
        let mut texts: Vec<String> = Vec::new();
        for leaf in leaves {
            let text = match script.get(&leaf.path) {
                Some(s) if count == 1 => s.vague.clone(),
                Some(s) => s.clarified.clone(),
                None => {
                    let v = self.exact(leaf);
                    answer_line(&leaf.label, &v)
                }
            };
            if texts.last() != Some(&text) {
                texts.push(text);
            }
        }
        texts.join("\n")
    }
}

impl SyntheticUser for ScriptedUser {
    fn reply(&mut self, transcript: &Transcript) -> Result<String, StepError> {
        let last = match transcript.last() {
            None => return Ok(OPENER.to_string()),
            Some(t) if t.role != Role::Agent => {
                return Err(StepError::Precondition("user must answer an agent turn".into()))
            }
            Some(t) => t,
        };
        let message = agent_message(&last.content);
        let group = self
            .questions
            .iter()
            .find(|(q, _)| message.ends_with(q.as_str()))
            .map(|(_, g)| *g);
        Ok(match group {
            Some(g) => self.answer(g),
            None => REPHRASE_REQUEST.to_string(),
        })
    }
}

fn with_thousands(v: &str) -> String {
    let (sign, rest) = match v.strip_prefix('-') {
        Some(r) => ("-", r),
        None => ("", v),
    };
    let (int, frac) = match rest.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (rest, None),
    };
    let mut grouped = String::new();
    for (k, c) in int.chars().enumerate() {
        if k > 0 && (int.len() - k) % 3 == 0 {
            grouped.push(',');
        }
        grouped.push(c);
    }
    match frac {
        Some(f) => format!("{sign}{grouped}.{f}"),
        None => format!("{sign}{grouped}"),
    }
}

/// A surface variant of a canonical value that normalizes back to it.
fn render_value(kind: &LeafKind, v: &str, rng: &mut ChaCha8Rng) -> String {
    match kind {
        LeafKind::Text | LeafKind::Integer => v.to_string(),
        LeafKind::Decimal if rng.random_bool(0.5) => with_thousands(v),
        LeafKind::Decimal => v.to_string(),
        LeafKind::Phone if rng.random_bool(0.5) => {
            let chunks: Vec<String> = v
                .as_bytes()
                .chunks(4)
                .map(|c| String::from_utf8_lossy(c).into_owned())
                .collect();
            format!("+{}", chunks.join(" "))
        }
        LeafKind::Phone => v.to_string(),
        LeafKind::Date if rng.random_bool(0.5) => {
            let parts: Vec<&str> = v.split('-').collect();
            match parts.as_slice() {
                [d, m, y] => format!("{y}-{m}-{d}"),
                _ => v.to_string(),
            }
        }
        LeafKind::Date => v.to_string(),
        LeafKind::Boolean => {
            let options: [&str; 3] = if v == "true" {
                ["yes", "Yes", "true"]
            } else {
                ["no", "No", "false"]
            };
            options[rng.random_range(0..options.len())].to_string()
        }
        LeafKind::Enum(_) => match rng.random_range(0..3) {
            0 => v.to_string(),
            1 => v.to_lowercase(),
            _ => v.to_uppercase(),
        },
        LeafKind::PostalCode => {
            let mut s = v.to_string();
            if s.len() > 3 && s.is_ascii() && rng.random_bool(0.5) {
                s.insert(s.len() - 3, ' ');
            }
            if rng.random_bool(0.5) {
                s = s.to_lowercase();
            }
            s
        }
        LeafKind::Currency if rng.random_bool(0.5) => v.to_lowercase(),
        LeafKind::Currency => v.to_string(),
    }
}
