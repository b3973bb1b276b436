use std::collections::VecDeque;
use std::path::Path;
use std::sync::Arc;

use serde_json::Value;
use thiserror::Error;

use super::{ChatMessage, Role};
use crate::bench::oracle_interpret;
use crate::machine::MachineSpec;
use crate::tools::{ToolCall, ToolDescriptor};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("scripted backend has no replies left")]
    ScriptExhausted,
    #[error("malformed backend reply: {0}")]
    MalformedBackendReply(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LlmKind {
    HttpChatCompletions,
    Scripted,
    Oracle,
}

/// Something that answers a conversation with one assistant message.
pub trait LlmBackend: Send {
    fn kind(&self) -> LlmKind;

    fn complete(
        &mut self,
        messages: &[ChatMessage],
        tools: &[ToolDescriptor],
    ) -> Result<ChatMessage, BackendError>;
}

/// Replays pre-recorded assistant messages in order.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    replies: VecDeque<ChatMessage>,
}

impl ScriptedBackend {
    pub fn new(replies: impl IntoIterator<Item = ChatMessage>) -> Self {
        Self {
            replies: replies.into_iter().collect(),
        }
    }

    /// Loads a JSON array of assistant messages.
    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let replies: Vec<ChatMessage> = serde_json::from_str(text)
            .map_err(|e| BackendError::MalformedBackendReply(format!("script: {e}")))?;
        if let Some(bad) = replies.iter().position(|m| m.role != Role::Assistant) {
            return Err(BackendError::MalformedBackendReply(format!(
                "script entry {bad} is not an assistant message"
            )));
        }
        Ok(Self::new(replies))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            BackendError::BackendUnavailable(format!("cannot read script {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    pub fn remaining(&self) -> usize {
        self.replies.len()
    }
}

impl LlmBackend for ScriptedBackend {
    fn kind(&self) -> LlmKind {
        LlmKind::Scripted
    }

    fn complete(&mut self, _: &[ChatMessage], _: &[ToolDescriptor]) -> Result<ChatMessage, BackendError> {
        self.replies.pop_front().ok_or(BackendError::ScriptExhausted)
    }
}

/// What the oracle backend does for one user message.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleAction {
    /// Issue these calls in one round.
    Calls(Vec<ToolCall>),
    /// Issue these rounds one after another.
    Rounds(Vec<Vec<ToolCall>>),
    /// Answer without calling any tool.
    Reply(String),
}

/// Rewrites the oracle's plan for a user turn: receives the 1-based turn
/// number, the user text and the interpreted calls.
pub type OracleHook = Box<dyn FnMut(usize, &str, Vec<ToolCall>) -> OracleAction + Send>;

/// Interprets the latest user message with the rule-based interpreter.
pub struct OracleBackend {
    spec: Arc<MachineSpec>,
    hook: Option<OracleHook>,
    plan: VecDeque<Vec<ToolCall>>,
}

impl OracleBackend {
    pub fn new(spec: Arc<MachineSpec>) -> Self {
        Self {
            spec,
            hook: None,
            plan: VecDeque::new(),
        }
    }

    pub fn with_hook(spec: Arc<MachineSpec>, hook: OracleHook) -> Self {
        Self {
            hook: Some(hook),
            ..Self::new(spec)
        }
    }
}

fn last_user(messages: &[ChatMessage]) -> Option<(usize, &str)> {
    messages
        .iter()
        .rposition(|m| m.role == Role::User)
        .map(|i| (i, messages[i].content.as_deref().unwrap_or("")))
}

fn summarize(results: &[&ChatMessage]) -> String {
    let mut lines = Vec::new();
    let mut failures = 0;
    for message in results {
        let parsed: Value =
            serde_json::from_str(message.content.as_deref().unwrap_or("")).unwrap_or(Value::Null);
        let parameter = parsed["parameter"].as_str().unwrap_or("?");
        if parsed["ok"] == Value::Bool(true) {
            let line = match (&parsed["old_value"], &parsed["new_value"]) {
                (old, Value::Null) => format!("{parameter} is {old}"),
                (old, new) => format!("{parameter}: {old} -> {new}"),
            };
            lines.push(line);
        } else {
            failures += 1;
            lines.push(format!(
                "{parameter} failed: {}",
                parsed["message"].as_str().unwrap_or("no details")
            ));
        }
    }
    let head = if failures == 0 { "Done." } else { "Some operations failed." };
    format!("{head} {}", lines.join("; "))
}

impl LlmBackend for OracleBackend {
    fn kind(&self) -> LlmKind {
        LlmKind::Oracle
    }

    fn complete(&mut self, messages: &[ChatMessage], _: &[ToolDescriptor]) -> Result<ChatMessage, BackendError> {
        let (user_at, text) = last_user(messages)
            .ok_or_else(|| BackendError::MalformedBackendReply("no user message to answer".into()))?;
        let turn = messages.iter().filter(|m| m.role == Role::User).count();
        let fresh = !messages[user_at..].iter().any(|m| m.role == Role::Assistant);
        if fresh {
            let calls = match oracle_interpret(text, &self.spec) {
                Ok(calls) => calls,
                Err(e) => {
                    self.plan.clear();
                    return Ok(ChatMessage::assistant(format!(
                        "I could not map this command to the machine ({}). Could you rephrase it?",
                        e.reason
                    )));
                }
            };
            let action = match &mut self.hook {
                Some(hook) => hook(turn, text, calls),
                None => OracleAction::Calls(calls),
            };
            let rounds = match action {
                OracleAction::Calls(calls) => vec![calls],
                OracleAction::Rounds(rounds) => rounds,
                OracleAction::Reply(reply) => {
                    self.plan.clear();
                    return Ok(ChatMessage::assistant(reply));
                }
            };
            self.plan = rounds
                .into_iter()
                .enumerate()
                .map(|(r, calls)| {
                    calls
                        .into_iter()
                        .enumerate()
                        .map(|(n, call)| ToolCall {
                            call_id: format!("call_{turn}_{}_{}", r + 1, n + 1),
                            ..call
                        })
                        .collect()
                })
                .collect();
        }
        match self.plan.pop_front() {
            Some(calls) if !calls.is_empty() => Ok(ChatMessage::assistant_calls(calls)),
            _ => {
                let results: Vec<&ChatMessage> =
                    messages[user_at..].iter().filter(|m| m.role == Role::Tool).collect();
                Ok(ChatMessage::assistant(summarize(&results)))
            }
        }
    }
}
