//! The conversational loop: system prompt, backend completion, tool
//! execution, repeat until the backend answers in plain text.

mod backend;
pub mod http;
mod prompt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, info, warn};

use crate::tools::{ToolCall, ToolResult, Toolbox};

pub use backend::{BackendError, LlmBackend, LlmKind, OracleAction, OracleBackend, OracleHook, ScriptedBackend};
pub use http::{HttpBackend, HttpSettings};
pub use prompt::{build_system_prompt, build_system_prompt_with, PromptOptions, PREAMBLE};

pub const DEFAULT_MAX_TOOL_ROUNDS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call_id: Option<String>,
}

impl ChatMessage {
    fn plain(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: Some(content.into()),
            tool_calls: Vec::new(),
            call_id: None,
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::plain(Role::Assistant, content)
    }

    pub fn assistant_calls(tool_calls: Vec<ToolCall>) -> Self {
        Self {
            role: Role::Assistant,
            content: None,
            tool_calls,
            call_id: None,
        }
    }

    pub fn tool(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            role: Role::Tool,
            content: Some(content.into()),
            tool_calls: Vec::new(),
            call_id: Some(call_id.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HistoryError {
    #[error("history must start with the only system message")]
    SystemPlacement,
    #[error("message {0}: tool message without a pending call id")]
    UnpairedTool(usize),
    #[error("message {0}: tool calls left unanswered")]
    UnansweredCalls(usize),
    #[error("message {0}: {1:?} message out of order")]
    OutOfOrder(usize, Role),
}

/// Checks the pairing and ordering rules every conversation must satisfy:
/// one leading system message, tool messages answering exactly the calls of
/// the preceding assistant message in order, and a final assistant answer
/// after every user message.
pub fn check_history(history: &[ChatMessage]) -> Result<(), HistoryError> {
    if history.is_empty() {
        return Ok(());
    }
    if history[0].role != Role::System
        || history[1..].iter().any(|m| m.role == Role::System)
    {
        return Err(HistoryError::SystemPlacement);
    }
    let mut pending: std::collections::VecDeque<&str> = Default::default();
    let mut pending_from = 0;
    let mut previous = Role::System;
    for (i, message) in history.iter().enumerate().skip(1) {
        match message.role {
            Role::Tool => {
                let id = message.call_id.as_deref();
                if pending.front().copied() != id || id.is_none() {
                    return Err(HistoryError::UnpairedTool(i));
                }
                pending.pop_front();
            }
            role => {
                if !pending.is_empty() {
                    return Err(HistoryError::UnansweredCalls(pending_from));
                }
                let legal = match role {
                    Role::User => matches!(previous, Role::System | Role::Assistant),
                    Role::Assistant => matches!(previous, Role::User | Role::Tool),
                    _ => false,
                };
                if !legal {
                    return Err(HistoryError::OutOfOrder(i, role));
                }
                if role == Role::Assistant {
                    pending.extend(message.tool_calls.iter().map(|c| c.call_id.as_str()));
                    pending_from = i;
                }
            }
        }
        previous = message.role;
    }
    if !pending.is_empty() {
        return Err(HistoryError::UnansweredCalls(pending_from));
    }
    if previous == Role::User {
        return Err(HistoryError::OutOfOrder(history.len() - 1, Role::User));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgentConfig {
    max_tool_rounds: usize,
}

impl AgentConfig {
    /// `None` when `max_tool_rounds` is zero.
    pub fn new(max_tool_rounds: usize) -> Option<Self> {
        (max_tool_rounds >= 1).then_some(Self { max_tool_rounds })
    }

    pub fn max_tool_rounds(&self) -> usize {
        self.max_tool_rounds
    }
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            max_tool_rounds: DEFAULT_MAX_TOOL_ROUNDS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail")]
pub enum AbortReason {
    RoundLimit,
    Backend(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub call: ToolCall,
    pub result: ToolResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnTrace {
    pub steps: Vec<TraceStep>,
    pub final_text: String,
    pub rounds_used: usize,
    pub aborted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<AbortReason>,
}

impl TurnTrace {
    pub fn tool_calls(&self) -> impl Iterator<Item = &ToolCall> {
        self.steps.iter().map(|s| &s.call)
    }

    pub fn call_count(&self) -> usize {
        self.steps.len()
    }
}

/// Runs one user turn. The history is extended in place and stays
/// well-formed whatever the backend does: the turn always ends with an
/// assistant message, and every executed call is answered by a tool message.
pub fn run_turn(
    config: &AgentConfig,
    backend: &mut dyn LlmBackend,
    toolbox: &Toolbox,
    history: &mut Vec<ChatMessage>,
    user_text: &str,
) -> TurnTrace {
    if history.is_empty() {
        history.push(ChatMessage::system(build_system_prompt(toolbox.spec())));
    }
    history.push(ChatMessage::user(user_text));
    let descriptors = toolbox.descriptors();
    let mut steps = Vec::new();
    let mut rounds_used = 0;

    let abort = |history: &mut Vec<ChatMessage>, steps, rounds_used, reason: AbortReason| {
        let final_text = match &reason {
            AbortReason::RoundLimit => format!(
                "Stopped after {rounds_used} tool rounds without a final answer; \
                 the request was not completed."
            ),
            AbortReason::Backend(msg) => {
                format!("The language model backend failed: {msg}. The request was not completed.")
            }
        };
        warn!(?reason, "turn aborted");
        history.push(ChatMessage::assistant(final_text.clone()));
        TurnTrace {
            steps,
            final_text,
            rounds_used,
            aborted: true,
            abort_reason: Some(reason),
        }
    };

    loop {
        let reply = match backend.complete(history, &descriptors) {
            Ok(reply) => reply,
            Err(e) => return abort(history, steps, rounds_used, AbortReason::Backend(e.to_string())),
        };
        if reply.tool_calls.is_empty() {
            let final_text = reply.content.clone().unwrap_or_default();
            history.push(ChatMessage::assistant(final_text.clone()));
            info!(rounds_used, calls = steps.len(), "turn finished");
            return TurnTrace {
                steps,
                final_text,
                rounds_used,
                aborted: false,
                abort_reason: None,
            };
        }
        if rounds_used == config.max_tool_rounds {
            return abort(history, steps, rounds_used, AbortReason::RoundLimit);
        }
        rounds_used += 1;
        let calls = reply.tool_calls.clone();
        history.push(ChatMessage {
            role: Role::Assistant,
            content: reply.content,
            tool_calls: reply.tool_calls,
            call_id: None,
        });
        for call in calls {
            let result = toolbox.dispatch(&call);
            debug!(tool = %call.tool, ok = result.ok, message = %result.message, "tool executed");
            history.push(ChatMessage::tool(
                call.call_id.clone(),
                result.to_model_json().to_string(),
            ));
            steps.push(TraceStep { call, result });
        }
    }
}

/// A conversation bound to one backend and one machine.
pub struct Conversation<'a> {
    pub config: AgentConfig,
    pub backend: Box<dyn LlmBackend + 'a>,
    pub history: Vec<ChatMessage>,
}

impl<'a> Conversation<'a> {
    pub fn new(config: AgentConfig, backend: Box<dyn LlmBackend + 'a>) -> Self {
        Self {
            config,
            backend,
            history: Vec::new(),
        }
    }

    pub fn send(&mut self, toolbox: &Toolbox, user_text: &str) -> TurnTrace {
        run_turn(
            &self.config,
            self.backend.as_mut(),
            toolbox,
            &mut self.history,
            user_text,
        )
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;
    use serde_json::json;

    use super::*;
    use crate::client::Session;
    use crate::testutil::{reference_space, reference_spec};
    use crate::tools::{ADJUST_NODE, READ_NODE, WRITE_NODE};
    use crate::TypedValue;

    fn toolbox() -> (Toolbox, crate::AddressSpace) {
        let space = reference_space();
        let tb = Toolbox::new(Arc::new(reference_spec()), Session::in_process(space.clone()));
        (tb, space)
    }

    #[test]
    fn oracle_raise_motorspeed() {
        let (tb, space) = toolbox();
        let mut backend = OracleBackend::new(tb.shared_spec());
        let mut history = Vec::new();
        let trace = run_turn(&AgentConfig::default(), &mut backend, &tb, &mut history, "Raise motorspeed by 30");
        assert!(!trace.aborted);
        assert_eq!(trace.steps.len(), 1);
        assert_eq!(trace.steps[0].call.tool, ADJUST_NODE);
        assert_eq!(trace.steps[0].call.arguments, json!({"parameter": "motorspeed", "delta": 30}));
        assert!(trace.steps[0].result.ok);
        assert!(trace.final_text.contains("1030"), "{}", trace.final_text);
        assert_eq!(space.snapshot().get("motorspeed"), Some(&TypedValue::Float32(1030.0)));
        assert_eq!(trace.rounds_used, 1);
        check_history(&history).unwrap();
        assert_eq!(history.len(), 5);
    }

    #[test]
    fn oracle_read_does_not_mutate() {
        let (tb, space) = toolbox();
        let before = space.snapshot();
        let revision = space.revision();
        let mut backend = OracleBackend::new(tb.shared_spec());
        let mut history = Vec::new();
        let trace = run_turn(
            &AgentConfig::default(),
            &mut backend,
            &tb,
            &mut history,
            "What is the current temperature?",
        );
        assert_eq!(trace.steps.len(), 1);
        assert_eq!(trace.steps[0].call.tool, READ_NODE);
        assert_eq!(trace.steps[0].result.old_value, Some(TypedValue::Int16(20)));
        assert!(trace.final_text.contains("20"));
        assert_eq!(space.snapshot(), before);
        assert_eq!(space.revision(), revision);
    }

    #[test]
    fn scripted_replays_in_order() {
        let (tb, space) = toolbox();
        let script = vec![
            ChatMessage::assistant_calls(vec![ToolCall::new(
                "a",
                WRITE_NODE,
                json!({"parameter": "textfield2", "value": "Done"}),
            )]),
            ChatMessage::assistant("done"),
        ];
        let mut backend = ScriptedBackend::new(script.clone());
        let descriptors = tb.descriptors();
        assert_eq!(backend.complete(&[], &descriptors).unwrap(), script[0]);
        assert_eq!(backend.complete(&[], &descriptors).unwrap(), script[1]);
        assert_eq!(backend.complete(&[], &descriptors), Err(BackendError::ScriptExhausted));

        let mut backend = ScriptedBackend::new(script);
        let mut history = Vec::new();
        let trace = run_turn(&AgentConfig::default(), &mut backend, &tb, &mut history, "set tf2 = 'Done'");
        assert_eq!(trace.final_text, "done");
        assert_eq!(space.snapshot().get("textfield2"), Some(&TypedValue::Text("Done".into())));
    }

    #[test]
    fn runaway_backend_aborts_at_round_limit() {
        let (tb, _) = toolbox();
        let looping: Vec<ChatMessage> = (0..50)
            .map(|i| {
                ChatMessage::assistant_calls(vec![ToolCall::new(
                    format!("c{i}"),
                    READ_NODE,
                    json!({"parameter": "temperature"}),
                )])
            })
            .collect();
        for max in [1, 3, DEFAULT_MAX_TOOL_ROUNDS] {
            let mut backend = ScriptedBackend::new(looping.clone());
            let mut history = Vec::new();
            let config = AgentConfig::new(max).unwrap();
            let trace = run_turn(&config, &mut backend, &tb, &mut history, "loop");
            assert!(trace.aborted);
            assert_eq!(trace.abort_reason, Some(AbortReason::RoundLimit));
            assert_eq!(trace.rounds_used, max);
            assert_eq!(trace.steps.len(), max);
            assert!(trace.final_text.contains("not completed"));
            check_history(&history).unwrap();
        }
        assert!(AgentConfig::new(0).is_none());
    }

    #[test]
    fn backend_failure_is_an_aborted_turn() {
        let (tb, _) = toolbox();
        let mut backend = ScriptedBackend::new(vec![]);
        let mut history = Vec::new();
        let trace = run_turn(&AgentConfig::default(), &mut backend, &tb, &mut history, "hello");
        assert!(trace.aborted);
        assert!(matches!(trace.abort_reason, Some(AbortReason::Backend(_))));
        assert!(trace.final_text.contains("backend"));
        check_history(&history).unwrap();
    }

    #[test]
    fn zero_call_backend_leaves_machine_alone() {
        let (tb, space) = toolbox();
        let before = space.snapshot();
        let mut backend = ScriptedBackend::new(vec![ChatMessage::assistant("Should I really?")]);
        let trace = run_turn(&AgentConfig::default(), &mut backend, &tb, &mut Vec::new(), "Drop speed");
        assert_eq!(trace.steps.len(), 0);
        assert_eq!(space.snapshot(), before);
        assert_eq!(space.revision(), 0);
    }

    #[test]
    fn history_checker_rejects_malformed() {
        let sys = ChatMessage::system("s");
        let user = ChatMessage::user("u");
        let call = ChatMessage::assistant_calls(vec![ToolCall::new("x", READ_NODE, json!({}))]);
        let answer = ChatMessage::tool("x", "{}");
        let done = ChatMessage::assistant("ok");
        assert!(check_history(&[sys.clone(), user.clone(), call.clone(), answer.clone(), done.clone()]).is_ok());
        assert!(check_history(&[user.clone(), done.clone()]).is_err());
        assert!(check_history(&[sys.clone(), user.clone(), call.clone(), done.clone()]).is_err());
        assert!(check_history(&[sys.clone(), user.clone(), answer.clone(), done.clone()]).is_err());
        assert!(check_history(&[sys.clone(), user.clone(), user.clone(), done.clone()]).is_err());
        assert!(check_history(&[sys.clone(), user.clone()]).is_err());
        assert!(check_history(&[sys, user, ChatMessage::tool("y", "{}"), done]).is_err());
    }

    fn arb_call(tag: usize) -> impl Strategy<Value = ToolCall> {
        let args = prop_oneof![
            Just(json!({"parameter": "temperature"})),
            Just(json!({"parameter": "pressure"})),
            (-50i32..50).prop_map(|d| json!({"parameter": "temperature", "delta": d})),
            (-50i32..50).prop_map(|v| json!({"parameter": "motorspeed", "value": v})),
            Just(json!({"parameter": "textfield1", "value": "x", "extra": 1})),
        ];
        let tool = prop_oneof![Just(READ_NODE), Just(WRITE_NODE), Just(ADJUST_NODE), Just("launch_rocket")];
        (tool, args, 0..3usize).prop_map(move |(tool, args, n)| ToolCall::new(format!("c{tag}-{n}"), tool, args))
    }

    fn arb_reply() -> impl Strategy<Value = ChatMessage> {
        prop_oneof![
            "[a-z ?]{0,12}".prop_map(ChatMessage::assistant),
            prop::collection::vec(arb_call(0), 1..4).prop_map(ChatMessage::assistant_calls),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn random_scripts_keep_history_well_formed(
            script in prop::collection::vec(arb_reply(), 0..20),
            turns in 1..4usize,
            max in 1..5usize,
        ) {
            let (tb, _) = toolbox();
            let mut backend = ScriptedBackend::new(script);
            let mut history = Vec::new();
            let config = AgentConfig::new(max).unwrap();
            for t in 0..turns {
                let before_len = history.len();
                let trace = run_turn(&config, &mut backend, &tb, &mut history, &format!("turn {t}"));
                prop_assert!(trace.rounds_used <= max);
                check_history(&history).map_err(|e| TestCaseError::fail(e.to_string()))?;
                // tool messages follow the call order of the trace
                let tool_ids: Vec<_> = history[before_len..]
                    .iter()
                    .filter(|m| m.role == Role::Tool)
                    .map(|m| m.call_id.clone().unwrap())
                    .collect();
                let trace_ids: Vec<_> = trace.steps.iter().map(|s| s.call.call_id.clone()).collect();
                prop_assert_eq!(tool_ids, trace_ids);
                for step in &trace.steps {
                    prop_assert_eq!(&step.call.call_id, &step.result.call_id);
                }
            }
        }

        #[test]
        fn scripted_turns_are_deterministic(script in prop::collection::vec(arb_reply(), 0..10)) {
            let run = |script: Vec<ChatMessage>| {
                let (tb, space) = toolbox();
                let mut backend = ScriptedBackend::new(script);
                let trace = run_turn(&AgentConfig::default(), &mut backend, &tb, &mut Vec::new(), "go");
                (trace, space.snapshot())
            };
            prop_assert_eq!(run(script.clone()), run(script));
        }
    }
}
