//! Canonical value normalization.
//!
//! Every value that enters a [`DataModelInstance`](super::DataModelInstance)
//! passes through [`normalize`], so equality between a captured value and the
//! ground truth is plain string equality on the canonical rendering.

use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reserved marker for unresolved leaves; never a legal filled value.
pub const UNCLEAR: &str = "UNCLEAR";

/// Kind of one flattened leaf.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "options")]
pub enum LeafKind {
    Text,
    /// Text leaf whose id or label names a postal code.
    PostalCode,
    Integer,
    /// Integer leaf whose id or label names a phone number. Digits are kept
    /// as a string so leading zeros survive.
    Phone,
    Decimal,
    Boolean,
    Date,
    Enum(Vec<String>),
    /// The currency half of a money group.
    Currency,
}

impl LeafKind {
    pub fn describe(&self) -> String {
        match self {
            LeafKind::Text => "text".into(),
            LeafKind::PostalCode => "postal code (text)".into(),
            LeafKind::Integer => "integer".into(),
            LeafKind::Phone => "phone number (digits)".into(),
            LeafKind::Decimal => "decimal number".into(),
            LeafKind::Boolean => "boolean (yes/no)".into(),
            LeafKind::Date => "date (DD-MM-YYYY)".into(),
            LeafKind::Enum(options) => format!("one of: {}", options.join(", ")),
            LeafKind::Currency => "3-letter currency code".into(),
        }
    }
}

/// A value in canonical form for its leaf kind.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CanonicalValue(String);

impl CanonicalValue {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Wraps a string already known to be canonical, e.g. one read back from
    /// a run file.
    pub(crate) fn from_canonical(s: String) -> Self {
        Self(s)
    }
}

impl fmt::Display for CanonicalValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NormalizeError {
    #[error("empty value")]
    Empty,
    #[error("{raw:?} is not a valid {kind}")]
    Unparseable { kind: &'static str, raw: String },
    #[error("{0:?} is not one of the allowed options")]
    NotAnOption(String),
    #[error("{0:?} is not a valid calendar date")]
    InvalidDate(String),
    #[error("{UNCLEAR:?} is reserved and cannot be a field value")]
    Reserved,
}

pub fn normalize(kind: &LeafKind, raw: &str) -> Result<CanonicalValue, NormalizeError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(NormalizeError::Empty);
    }
    let out = match kind {
        LeafKind::Text => trimmed.to_string(),
        LeafKind::PostalCode => trimmed
            .chars()
            .filter(|c| !c.is_whitespace())
            .flat_map(char::to_uppercase)
            .collect(),
        LeafKind::Currency => {
            if trimmed.len() == 3 && trimmed.bytes().all(|b| b.is_ascii_alphabetic()) {
                trimmed.to_ascii_uppercase()
            } else {
                return Err(unparseable("currency code", raw));
            }
        }
        LeafKind::Phone => {
            let digits: String = trimmed.chars().filter(char::is_ascii_digit).collect();
            if digits.is_empty() {
                return Err(unparseable("phone number", raw));
            }
            digits
        }
        LeafKind::Integer => {
            let n = parse_number(trimmed).ok_or_else(|| unparseable("integer", raw))?;
            if n.fraction.bytes().any(|b| b != b'0') {
                return Err(unparseable("integer", raw));
            }
            n.render()
        }
        LeafKind::Decimal => parse_number(trimmed)
            .ok_or_else(|| unparseable("decimal", raw))?
            .render(),
        LeafKind::Boolean => match trimmed.to_ascii_lowercase().as_str() {
            "yes" | "true" => "true".into(),
            "no" | "false" => "false".into(),
            _ => return Err(unparseable("boolean", raw)),
        },
        LeafKind::Date => normalize_date(trimmed)?,
        LeafKind::Enum(options) => {
            let key = option_key(trimmed);
            options
                .iter()
                .find(|o| option_key(o) == key)
                .cloned()
                .ok_or_else(|| NormalizeError::NotAnOption(trimmed.to_string()))?
        }
    };
    if out.eq_ignore_ascii_case(UNCLEAR) {
        return Err(NormalizeError::Reserved);
    }
    Ok(CanonicalValue(out))
}

/// Key under which enum options are compared: case-folded, whitespace collapsed.
pub(crate) fn option_key(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn unparseable(kind: &'static str, raw: &str) -> NormalizeError {
    NormalizeError::Unparseable {
        kind,
        raw: raw.to_string(),
    }
}

/// Exact decimal as sign + digit strings; never touches floating point.
struct ExactNumber {
    negative: bool,
    integer: String,
    fraction: String,
}

impl ExactNumber {
    fn render(&self) -> String {
        let int = self.integer.trim_start_matches('0');
        let int = if int.is_empty() { "0" } else { int };
        let frac = self.fraction.trim_end_matches('0');
        let zero = int == "0" && frac.is_empty();
        let mut out = String::new();
        if self.negative && !zero {
            out.push('-');
        }
        out.push_str(int);
        if !frac.is_empty() {
            out.push('.');
            out.push_str(frac);
        }
        out
    }
}

const CURRENCY_SYMBOLS: [char; 4] = ['$', '€', '£', '¥'];

fn parse_number(s: &str) -> Option<ExactNumber> {
    let mut rest = s;
    let mut negative = false;
    if let Some(r) = rest.strip_prefix('-') {
        negative = true;
        rest = r;
    }
    if let Some(r) = rest.strip_prefix(CURRENCY_SYMBOLS) {
        rest = r.trim_start();
    }
    if !negative {
        if let Some(r) = rest.strip_prefix('-') {
            negative = true;
            rest = r;
        }
    }
    let (int_part, frac_part) = match rest.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (rest, None),
    };
    let integer = strip_thousands(int_part)?;
    let fraction = match frac_part {
        Some(f) if f.bytes().all(|b| b.is_ascii_digit()) => f.to_string(),
        Some(_) => return None,
        None => String::new(),
    };
    if integer.is_empty() && fraction.is_empty() {
        return None;
    }
    Some(ExactNumber {
        negative,
        integer,
        fraction,
    })
}

/// Removes `,` thousands separators, requiring well-formed 3-digit groups.
fn strip_thousands(s: &str) -> Option<String> {
    if !s.contains(',') {
        return s.bytes().all(|b| b.is_ascii_digit()).then(|| s.to_string());
    }
    let mut groups = s.split(',');
    let head = groups.next()?;
    if head.is_empty() || head.len() > 3 || !head.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let mut out = head.to_string();
    for g in groups {
        if g.len() != 3 || !g.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        out.push_str(g);
    }
    Some(out)
}

fn normalize_date(s: &str) -> Result<String, NormalizeError> {
    let parts: Vec<&str> = s.split('-').collect();
    let all_digits = |p: &str| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit());
    let (y, m, d) = match parts.as_slice() {
        [d, m, y] if d.len() == 2 && m.len() == 2 && y.len() == 4 => (*y, *m, *d),
        [y, m, d] if y.len() == 4 && m.len() == 2 && d.len() == 2 => (*y, *m, *d),
        _ => return Err(unparseable("date", s)),
    };
    if !(all_digits(y) && all_digits(m) && all_digits(d)) {
        return Err(unparseable("date", s));
    }
    let date = NaiveDate::from_ymd_opt(
        y.parse().expect("digits"),
        m.parse().expect("digits"),
        d.parse().expect("digits"),
    )
    .ok_or_else(|| NormalizeError::InvalidDate(s.to_string()))?;
    Ok(date.format("%d-%m-%Y").to_string())
}
