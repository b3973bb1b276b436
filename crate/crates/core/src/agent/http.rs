//! Client for chat-completions style HTTP endpoints with tool calling.

use std::fmt;
use std::time::Duration;

use serde_json::{json, Map, Value};

use super::backend::{BackendError, LlmBackend, LlmKind};
use super::{ChatMessage, Role};
use crate::tools::{ToolCall, ToolDescriptor};

#[derive(Clone, PartialEq)]
pub struct HttpSettings {
    /// Base URL up to and including the API version, e.g. `https://host/v1`.
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub temperature: f64,
    pub timeout: Duration,
}

impl HttpSettings {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            temperature: 0.0,
            timeout: Duration::from_secs(120),
        }
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

impl fmt::Debug for HttpSettings {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpSettings")
            .field("base_url", &self.base_url)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| crate::machine::REDACTED))
            .field("temperature", &self.temperature)
            .field("timeout", &self.timeout)
            .finish()
    }
}

#[derive(Debug)]
pub struct HttpBackend {
    settings: HttpSettings,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(settings: HttpSettings) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(settings.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { settings, agent }
    }

    pub fn settings(&self) -> &HttpSettings {
        &self.settings
    }
}

/// Renders the history into the `messages` array of a request.
pub fn wire_messages(messages: &[ChatMessage]) -> Vec<Value> {
    messages
        .iter()
        .map(|m| match m.role {
            Role::System | Role::User => json!({
                "role": if m.role == Role::System { "system" } else { "user" },
                "content": m.content.clone().unwrap_or_default(),
            }),
            Role::Assistant => {
                let mut obj = Map::new();
                obj.insert("role".into(), "assistant".into());
                obj.insert("content".into(), m.content.clone().map_or(Value::Null, Value::String));
                if !m.tool_calls.is_empty() {
                    let calls: Vec<Value> = m
                        .tool_calls
                        .iter()
                        .map(|c| {
                            let arguments = match &c.arguments {
                                Value::String(raw) => raw.clone(),
                                other => other.to_string(),
                            };
                            json!({
                                "id": c.call_id,
                                "type": "function",
                                "function": {"name": c.tool, "arguments": arguments},
                            })
                        })
                        .collect();
                    obj.insert("tool_calls".into(), Value::Array(calls));
                }
                Value::Object(obj)
            }
            Role::Tool => json!({
                "role": "tool",
                "tool_call_id": m.call_id.clone().unwrap_or_default(),
                "content": m.content.clone().unwrap_or_default(),
            }),
        })
        .collect()
}

pub fn request_body(settings: &HttpSettings, messages: &[ChatMessage], tools: &[ToolDescriptor]) -> Value {
    let mut body = json!({
        "model": settings.model,
        "messages": wire_messages(messages),
        "temperature": settings.temperature,
    });
    if !tools.is_empty() {
        body["tools"] = tools.iter().map(ToolDescriptor::function_schema).collect();
    }
    body
}

/// Extracts the assistant message from a response body. Arguments that are
/// not valid JSON are kept as a string so tool validation reports them back
/// to the model.
pub fn parse_reply(body: &Value) -> Result<ChatMessage, BackendError> {
    let malformed = |what: &str| BackendError::MalformedBackendReply(what.to_string());
    let message = body
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .ok_or_else(|| malformed("missing choices[0].message"))?;
    let content = match message.get("content") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(malformed("content is not a string")),
    };
    let mut tool_calls = Vec::new();
    if let Some(calls) = message.get("tool_calls").filter(|v| !v.is_null()) {
        let calls = calls.as_array().ok_or_else(|| malformed("tool_calls is not an array"))?;
        for call in calls {
            let id = call["id"].as_str().ok_or_else(|| malformed("tool call without id"))?;
            let function = &call["function"];
            let name = function["name"]
                .as_str()
                .ok_or_else(|| malformed("tool call without function name"))?;
            let arguments = match &function["arguments"] {
                Value::String(raw) => serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone())),
                Value::Null => Value::Object(Map::new()),
                other => other.clone(),
            };
            tool_calls.push(ToolCall::new(id, name, arguments));
        }
    }
    if content.is_none() && tool_calls.is_empty() {
        return Err(malformed("reply has neither content nor tool calls"));
    }
    Ok(ChatMessage {
        role: Role::Assistant,
        content,
        tool_calls,
        call_id: None,
    })
}

impl LlmBackend for HttpBackend {
    fn kind(&self) -> LlmKind {
        LlmKind::HttpChatCompletions
    }

    fn complete(&mut self, messages: &[ChatMessage], tools: &[ToolDescriptor]) -> Result<ChatMessage, BackendError> {
        let body = request_body(&self.settings, messages, tools);
        let mut request = self.agent.post(self.settings.endpoint());
        if let Some(key) = &self.settings.api_key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(&body)
            .map_err(|e| BackendError::BackendUnavailable(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            let detail = response.body_mut().read_to_string().unwrap_or_default();
            let detail: String = detail.chars().take(300).collect();
            return Err(BackendError::BackendUnavailable(format!("HTTP {status}: {detail}")));
        }
        let reply: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::MalformedBackendReply(e.to_string()))?;
        parse_reply(&reply)
    }
}
