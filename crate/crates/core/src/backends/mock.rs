use std::collections::VecDeque;
use std::sync::Mutex;

use super::{check_messages, BackendError, ChatBackend, ChatMessage, GenerationParams};

/// In-memory backend replaying a queue of canned outcomes.
///
/// Every call is recorded so tests can inspect the prompts that were sent.
#[derive(Debug, Default)]
pub struct MockBackend {
    queue: Mutex<VecDeque<Result<String, BackendError>>>,
    calls: Mutex<Vec<Vec<ChatMessage>>>,
}

impl MockBackend {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::with_outcomes(replies.into_iter().map(|s| Ok(s.into())))
    }

    pub fn with_outcomes(outcomes: impl IntoIterator<Item = Result<String, BackendError>>) -> Self {
        Self {
            queue: Mutex::new(outcomes.into_iter().collect()),
            calls: Mutex::default(),
        }
    }

    pub fn push(&self, outcome: Result<String, BackendError>) {
        self.queue.lock().unwrap().push_back(outcome);
    }

    pub fn calls(&self) -> Vec<Vec<ChatMessage>> {
        self.calls.lock().unwrap().clone()
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap().len()
    }
}

impl ChatBackend for MockBackend {
    fn complete(
        &self,
        messages: &[ChatMessage],
        _params: &GenerationParams,
    ) -> Result<String, BackendError> {
        check_messages(messages)?;
        self.calls.lock().unwrap().push(messages.to_vec());
        let next = self
            .queue
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or(Err(BackendError::Exhausted))?;
        if next.is_empty() {
            return Err(BackendError::EmptyCompletion);
        }
        Ok(next)
    }
}
