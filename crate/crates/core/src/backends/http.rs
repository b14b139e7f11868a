use serde_json::{json, Value};

use super::{check_messages, BackendError, ChatBackend, ChatMessage, GenerationParams};

/// Client for `POST <base_url>/chat/completions` endpoints.
pub struct HttpChatBackend {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpChatBackend {
    pub fn new(base_url: &str, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

pub(crate) fn request_body(messages: &[ChatMessage], params: &GenerationParams) -> Value {
    let wire: Vec<Value> = messages
        .iter()
        .map(|m| json!({"role": m.role.wire_role(), "content": m.content}))
        .collect();
    let mut body = json!({
        "model": params.model,
        "messages": wire,
        "temperature": params.temperature,
        "max_tokens": params.max_tokens,
    });
    if let Some(seed) = params.seed {
        body["seed"] = json!(seed);
    }
    body
}

pub(crate) fn extract_content(body: &str) -> Result<String, BackendError> {
    let v: Value =
        serde_json::from_str(body).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
    let content = v
        .pointer("/choices/0/message/content")
        .ok_or_else(|| BackendError::MalformedResponse("no choices[0].message.content".into()))?;
    match content {
        Value::String(s) if s.trim().is_empty() => Err(BackendError::EmptyCompletion),
        Value::String(s) => Ok(s.clone()),
        Value::Null => Err(BackendError::EmptyCompletion),
        other => Err(BackendError::MalformedResponse(format!(
            "content is not a string: {other}"
        ))),
    }
}

fn classify(err: ureq::Error) -> BackendError {
    match err {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        ureq::Error::StatusCode(429) => BackendError::RateLimited,
        ureq::Error::StatusCode(status) => BackendError::Status {
            status,
            body: String::new(),
        },
        ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::TimedOut => BackendError::Timeout,
        ureq::Error::BadUri(u) => BackendError::InvalidRequest(format!("bad uri {u}")),
        other => BackendError::Transport(other.to_string()),
    }
}

impl ChatBackend for HttpChatBackend {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &GenerationParams,
    ) -> Result<String, BackendError> {
        check_messages(messages)?;
        params.validate()?;
        let mut req = self
            .agent
            .post(&self.endpoint)
            .config()
            .timeout_global(Some(params.timeout))
            .build()
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send(request_body(messages, params).to_string())
            .map_err(classify)?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(classify)?;
        match status {
            200..=299 => extract_content(&body),
            429 => Err(BackendError::RateLimited),
            _ => Err(BackendError::Status { status, body }),
        }
    }
}
