//! The two sides of a conversation: the data-capture agent and the synthetic
//! user, each available backed by a chat model or as a deterministic script.

mod envelope;
mod llm;
mod prompts;
mod scripted;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::BackendError;
use crate::schema::{AgentMode, DataModelInstance, DataSchema, GroundTruthProfile};
use crate::transcript::Transcript;

pub use envelope::{parse_envelope, render, EnvelopeError, ReplyEnvelope};
pub use llm::{LlmAgent, LlmUser, CORRECTIVE_INSTRUCTION};
pub use prompts::{render_agent_prompt, render_user_prompt, PromptTemplateSet, TemplateError};
pub use scripted::{
    answer_line, ask_question, follow_up_question, money_answer_line, ScriptedAgent, ScriptedUser,
    CLOSING, REPHRASE_REQUEST,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    Standard,
    Ambiguous,
}

impl ProfileKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProfileKind::Standard => "standard",
            ProfileKind::Ambiguous => "ambiguous",
        }
    }
}

impl fmt::Display for ProfileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A synthetic user persona and the facts it answers from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserProfile {
    kind: ProfileKind,
    ground_truth: GroundTruthProfile,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProfileError {
    #[error("an ambiguous profile needs a non-empty ambiguity script")]
    EmptyScript,
}

impl UserProfile {
    /// Standard profiles never dodge, so their script is dropped.
    pub fn new(kind: ProfileKind, ground_truth: GroundTruthProfile) -> Result<Self, ProfileError> {
        let ground_truth = match kind {
            ProfileKind::Standard => ground_truth.without_script(),
            ProfileKind::Ambiguous if ground_truth.ambiguity_script.is_empty() => {
                return Err(ProfileError::EmptyScript)
            }
            ProfileKind::Ambiguous => ground_truth,
        };
        Ok(Self { kind, ground_truth })
    }

    pub fn kind(&self) -> ProfileKind {
        self.kind
    }

    pub fn ground_truth(&self) -> &GroundTruthProfile {
        &self.ground_truth
    }
}

/// What the agent sees when asked for its next turn.
pub struct TurnContext<'a> {
    pub schema: &'a DataSchema,
    pub instance: &'a DataModelInstance,
    pub transcript: &'a Transcript,
    pub mode: AgentMode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentReply {
    pub envelope: ReplyEnvelope,
    /// Unparseable completions discarded before this reply.
    pub failed_attempts: u32,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum StepError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("no parseable reply after {attempts} attempts: {last}")]
    Parse { attempts: u32, last: String },
    #[error("precondition failed: {0}")]
    Precondition(String),
}

pub trait Agent: Send {
    fn reply(&mut self, ctx: &TurnContext<'_>) -> Result<AgentReply, StepError>;
}

pub trait SyntheticUser: Send {
    /// The opener on an empty transcript, otherwise an answer to the last
    /// agent turn.
    fn reply(&mut self, transcript: &Transcript) -> Result<String, StepError>;
}

/// The user-visible part of a stored agent turn.
pub(crate) fn agent_message(content: &str) -> String {
    parse_envelope(content)
        .map(|e| e.message)
        .unwrap_or_else(|_| content.to_string())
}
