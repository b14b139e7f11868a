use std::sync::Arc;

use super::{
    agent_message, parse_envelope, render_agent_prompt, render_user_prompt, Agent, AgentReply,
    PromptTemplateSet, StepError, SyntheticUser, TurnContext, UserProfile,
};
use crate::backends::{ChatBackend, ChatMessage, GenerationParams};
use crate::schema::DataSchema;
use crate::transcript::{Role, Transcript, OPENER};

/// Sent back to the model after a reply that did not contain an envelope.
pub const CORRECTIVE_INSTRUCTION: &str = "Your last reply could not be parsed. Reply again with \
exactly one JSON object of the form {\"message\": \"...\", \"data\": {...}} and no other text.";

pub struct LlmAgent {
    backend: Arc<dyn ChatBackend>,
    templates: Arc<PromptTemplateSet>,
    params: GenerationParams,
    /// Corrective retries after the first unparseable completion.
    parse_retries: u32,
}

impl LlmAgent {
    pub fn new(
        backend: Arc<dyn ChatBackend>,
        templates: Arc<PromptTemplateSet>,
        params: GenerationParams,
        parse_retries: u32,
    ) -> Self {
        Self {
            backend,
            templates,
            params,
            parse_retries,
        }
    }
}

impl Agent for LlmAgent {
    fn reply(&mut self, ctx: &TurnContext<'_>) -> Result<AgentReply, StepError> {
        if ctx.transcript.last().map(|t| t.role) != Some(Role::User) {
            return Err(StepError::Precondition("agent must answer a user turn".into()));
        }
        let system = render_agent_prompt(&self.templates, ctx.schema, ctx.instance, ctx.mode)
            .map_err(|e| StepError::Precondition(e.to_string()))?;
        let mut messages = vec![ChatMessage::system(system)];
        messages.extend(ctx.transcript.turns().iter().map(|t| match t.role {
            Role::User => ChatMessage::other(t.content.clone()),
            Role::Agent => ChatMessage::own(t.content.clone()),
        }));
        let mut failed = 0;
        loop {
            let raw = self.backend.complete(&messages, &self.params)?;
            match parse_envelope(&raw) {
                Ok(envelope) => {
                    return Ok(AgentReply {
                        envelope,
                        failed_attempts: failed,
                    })
                }
                Err(e) => {
                    failed += 1;
                    if failed > self.parse_retries {
                        return Err(StepError::Parse {
                            attempts: failed,
                            last: e.to_string(),
                        });
                    }
                    messages.push(ChatMessage::own(raw));
                    messages.push(ChatMessage::other(CORRECTIVE_INSTRUCTION));
                }
            }
        }
    }
}

pub struct LlmUser {
    backend: Arc<dyn ChatBackend>,
    system: String,
    params: GenerationParams,
}

impl LlmUser {
    pub fn new(
        backend: Arc<dyn ChatBackend>,
        templates: &PromptTemplateSet,
        schema: &DataSchema,
        profile: &UserProfile,
        params: GenerationParams,
    ) -> Result<Self, StepError> {
        let system = render_user_prompt(templates, schema, profile)
            .map_err(|e| StepError::Precondition(e.to_string()))?;
        Ok(Self {
            backend,
            system,
            params,
        })
    }
}

impl SyntheticUser for LlmUser {
    fn reply(&mut self, transcript: &Transcript) -> Result<String, StepError> {
        match transcript.last() {
            None => return Ok(OPENER.to_string()),
            Some(t) if t.role != Role::Agent => {
                return Err(StepError::Precondition("user must answer an agent turn".into()))
            }
            Some(_) => {}
        }
        let mut messages = vec![ChatMessage::system(self.system.clone())];
        messages.extend(transcript.turns().iter().map(|t| match t.role {
            Role::User => ChatMessage::own(t.content.clone()),
            Role::Agent => ChatMessage::other(agent_message(&t.content)),
        }));
        Ok(self.backend.complete(&messages, &self.params)?)
    }
}
