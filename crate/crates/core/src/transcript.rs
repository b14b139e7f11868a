//! Conversation history and durable run records.
//!
//! A run file is line-delimited JSON: a header line, one line per turn, and a
//! footer carrying the final instance and termination reason:
//!
//! ```text
//! {"run_id": "...", "schema": "...", "mode": "...", ..., "expected": {...}}
//! {"t": 0, "role": "user", "content": "...", "digest": "<sha256>", "state": {...}}
//! ...
//! {"final": {...}, "termination": "Complete", "ms": 0, ...}
//! ```

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::BackendChoice;
use crate::participants::ProfileKind;
use crate::schema::{AgentMode, CanonicalValue, DataModelInstance, LeafPath, Violation};

/// Fixed opening line of every conversation.
pub const OPENER: &str = "Hello, I am ready.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Agent,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::User => "user",
            Role::Agent => "agent",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub index: usize,
    pub role: Role,
    /// User text, or the rendered reply envelope for agent turns.
    pub content: String,
    /// Digest of the instance after this turn.
    pub snapshot_digest: Option<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TranscriptError {
    #[error("turn {index} must be a {expected} turn, got {got}")]
    Alternation {
        index: usize,
        expected: Role,
        got: Role,
    },
}

/// Ordered turns, alternating user/agent and starting with the user.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    turns: Vec<Turn>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn last(&self) -> Option<&Turn> {
        self.turns.last()
    }

    /// Role the next turn must have.
    pub fn next_role(&self) -> Role {
        match self.turns.last() {
            None | Some(Turn { role: Role::Agent, .. }) => Role::User,
            Some(_) => Role::Agent,
        }
    }

    pub fn append_turn(
        &mut self,
        role: Role,
        content: impl Into<String>,
        snapshot_digest: Option<String>,
    ) -> Result<&Turn, TranscriptError> {
        let expected = self.next_role();
        if role != expected {
            return Err(TranscriptError::Alternation {
                index: self.turns.len(),
                expected,
                got: role,
            });
        }
        self.turns.push(Turn {
            index: self.turns.len(),
            role,
            content: content.into(),
            snapshot_digest,
        });
        Ok(self.turns.last().expect("just pushed"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Termination {
    Complete,
    MaxSteps,
    ParseFailure,
    BackendFailure,
}

impl Termination {
    pub const ALL: [Termination; 4] = [
        Termination::Complete,
        Termination::MaxSteps,
        Termination::ParseFailure,
        Termination::BackendFailure,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Complete => "Complete",
            Termination::MaxSteps => "MaxSteps",
            Termination::ParseFailure => "ParseFailure",
            Termination::BackendFailure => "BackendFailure",
        }
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Configuration a run was executed under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: AgentMode,
    pub profile: ProfileKind,
    pub backend: BackendChoice,
    pub seed: u64,
    #[serde(rename = "T")]
    pub max_iterations: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnViolation {
    pub turn: usize,
    #[serde(flatten)]
    pub violation: Violation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunRecord {
    pub run_id: String,
    pub schema: String,
    pub config: RunSummary,
    /// Reference values the run is scored against.
    pub expected: IndexMap<LeafPath, CanonicalValue>,
    pub transcript: Transcript,
    /// Instance after each turn, aligned with `transcript.turns()`.
    pub snapshots: Vec<DataModelInstance>,
    pub final_instance: DataModelInstance,
    pub termination: Termination,
    pub error: Option<String>,
    pub iterations: u32,
    pub violations: Vec<TurnViolation>,
    /// Agent replies that failed envelope parsing (including retried ones).
    pub parse_failures: u32,
    pub wall_ms: u64,
}

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt run file {path} (line {line}): {reason}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    run_id: String,
    schema: String,
    #[serde(flatten)]
    config: RunSummary,
    expected: IndexMap<LeafPath, CanonicalValue>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TurnLine {
    t: usize,
    role: Role,
    content: String,
    digest: String,
    state: DataModelInstance,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FooterLine {
    #[serde(rename = "final")]
    final_instance: DataModelInstance,
    termination: Termination,
    ms: u64,
    iterations: u32,
    parse_failures: u32,
    violations: Vec<TurnViolation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn run_file_name(run_id: &str) -> String {
    format!("{run_id}.jsonl")
}

/// Renders a record in run-file form.
pub fn render_run(record: &RunRecord) -> String {
    let mut out = String::new();
    let header = HeaderLine {
        run_id: record.run_id.clone(),
        schema: record.schema.clone(),
        config: record.config.clone(),
        expected: record.expected.clone(),
    };
    push_line(&mut out, &header);
    for (turn, state) in record.transcript.turns().iter().zip(&record.snapshots) {
        push_line(
            &mut out,
            &TurnLine {
                t: turn.index,
                role: turn.role,
                content: turn.content.clone(),
                digest: turn.snapshot_digest.clone().unwrap_or_else(|| state.digest()),
                state: state.clone(),
            },
        );
    }
    push_line(
        &mut out,
        &FooterLine {
            final_instance: record.final_instance.clone(),
            termination: record.termination,
            ms: record.wall_ms,
            iterations: record.iterations,
            parse_failures: record.parse_failures,
            violations: record.violations.clone(),
            error: record.error.clone(),
        },
    );
    out
}

fn push_line<T: Serialize>(out: &mut String, value: &T) {
    out.push_str(&serde_json::to_string(value).expect("run lines serialize"));
    out.push('\n');
}

/// Writes `<run_id>.jsonl` into `dir` and returns its path.
pub fn persist_run(record: &RunRecord, dir: &Path) -> Result<PathBuf, PersistError> {
    let path = dir.join(run_file_name(&record.run_id));
    fs::write(&path, render_run(record)).map_err(|source| PersistError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

pub fn load_run(path: &Path) -> Result<RunRecord, PersistError> {
    let text = fs::read_to_string(path).map_err(|source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_run(&text).map_err(|(line, reason)| PersistError::Corrupt {
        path: path.to_path_buf(),
        line,
        reason,
    })
}

fn parse_run(text: &str) -> Result<RunRecord, (usize, String)> {
    if !text.ends_with('\n') {
        return Err((text.lines().count(), "file does not end with a newline".into()));
    }
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() < 2 {
        return Err((lines.len(), "missing header or footer".into()));
    }
    let parse_err = |n: usize| move |e: serde_json::Error| (n + 1, e.to_string());
    let header: HeaderLine = serde_json::from_str(lines[0]).map_err(parse_err(0))?;
    let last = lines.len() - 1;
    let footer: FooterLine = serde_json::from_str(lines[last]).map_err(parse_err(last))?;

    let mut transcript = Transcript::new();
    let mut snapshots = Vec::with_capacity(last - 1);
    for (n, line) in lines.iter().enumerate().take(last).skip(1) {
        let turn: TurnLine = serde_json::from_str(line).map_err(parse_err(n))?;
        let mut state = turn.state;
        state.schema = header.schema.clone();
        if state.digest() != turn.digest {
            return Err((n + 1, "digest does not match state".into()));
        }
        if turn.t != transcript.len() {
            return Err((n + 1, format!("expected turn {}, found {}", transcript.len(), turn.t)));
        }
        transcript
            .append_turn(turn.role, turn.content, Some(turn.digest))
            .map_err(|e| (n + 1, e.to_string()))?;
        snapshots.push(state);
    }
    let mut final_instance = footer.final_instance;
    final_instance.schema = header.schema.clone();
    Ok(RunRecord {
        run_id: header.run_id,
        schema: header.schema,
        config: header.config,
        expected: header.expected,
        transcript,
        snapshots,
        final_instance,
        termination: footer.termination,
        error: footer.error,
        iterations: footer.iterations,
        violations: footer.violations,
        parse_failures: footer.parse_failures,
        wall_ms: footer.ms,
    })
}

/// Loads every `*.jsonl` run file in `dir`, ordered by file name.
pub fn load_dir(dir: &Path) -> Result<Vec<RunRecord>, PersistError> {
    let io_err = |source| PersistError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_run(p)).collect()
}
