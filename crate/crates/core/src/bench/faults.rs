//! Deliberate mistakes injected into the oracle's tool calls, used to
//! reproduce known model failures and to test the error classifier.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{oracle_interpret, BenchmarkSuite, UnparsableCommand};
use crate::agent::{ChatMessage, OracleAction, OracleBackend, OracleHook};
use crate::machine::MachineSpec;
use crate::tools::{ToolCall, ADJUST_NODE, WRITE_NODE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fault")]
pub enum Fault {
    /// Negate the first adjust argument.
    SignFlip,
    /// Issue the whole set of calls a second time in a new round.
    Duplicate,
    /// Ask for confirmation instead of acting.
    CallbackQuestion,
    /// Write the magnitude of the first delta instead of adjusting by it.
    VerbMisread,
    /// Adjust by the first numeric write value instead of writing it.
    ToolMisread,
    /// Additionally write `value` to `parameter`.
    ExtraWrite { parameter: String, value: Value },
}

pub type FaultPlan = BTreeMap<usize, Fault>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FaultError {
    #[error("fault {fault} does not apply to command {index}: {reason}")]
    NotApplicable { index: usize, fault: String, reason: String },
    #[error(transparent)]
    Unparsable(#[from] UnparsableCommand),
}

fn negate(v: &Value) -> Value {
    match (v.as_i64(), v.as_f64()) {
        (Some(i), _) => json!(-i),
        (None, Some(f)) => json!(-f),
        _ => v.clone(),
    }
}

fn magnitude(v: &Value) -> Value {
    match (v.as_i64(), v.as_f64()) {
        (Some(i), _) => json!(i.abs()),
        (None, Some(f)) => json!(f.abs()),
        _ => v.clone(),
    }
}

/// Rewrites the interpreted calls of one command. `None` when the fault has
/// nothing to act on.
pub fn apply_fault(fault: &Fault, text: &str, mut calls: Vec<ToolCall>) -> Option<OracleAction> {
    match fault {
        Fault::SignFlip => {
            let call = calls.iter_mut().find(|c| c.tool == ADJUST_NODE)?;
            let args = call.arguments.as_object_mut()?;
            for key in ["delta", "percent"] {
                if let Some(v) = args.get_mut(key) {
                    *v = negate(v);
                }
            }
            Some(OracleAction::Calls(calls))
        }
        Fault::Duplicate => Some(OracleAction::Rounds(vec![calls.clone(), calls])),
        Fault::CallbackQuestion => Some(OracleAction::Reply(format!(
            "Just to confirm: should I carry out \"{text}\" exactly as written?"
        ))),
        Fault::VerbMisread => {
            let call = calls
                .iter_mut()
                .find(|c| c.tool == ADJUST_NODE && c.arguments.get("delta").is_some())?;
            let parameter = call.arguments["parameter"].clone();
            let value = magnitude(&call.arguments["delta"]);
            *call = ToolCall::new(call.call_id.clone(), WRITE_NODE, json!({"parameter": parameter, "value": value}));
            Some(OracleAction::Calls(calls))
        }
        Fault::ToolMisread => {
            let call = calls
                .iter_mut()
                .find(|c| c.tool == WRITE_NODE && c.arguments["value"].is_number())?;
            let parameter = call.arguments["parameter"].clone();
            let delta = call.arguments["value"].clone();
            *call = ToolCall::new(call.call_id.clone(), ADJUST_NODE, json!({"parameter": parameter, "delta": delta}));
            Some(OracleAction::Calls(calls))
        }
        Fault::ExtraWrite { parameter, value } => {
            calls.push(ToolCall::new(
                "extra",
                WRITE_NODE,
                json!({"parameter": parameter, "value": value}),
            ));
            Some(OracleAction::Calls(calls))
        }
    }
}

/// Oracle hook applying `plan`, keyed by 1-based turn number. A fault that
/// does not apply leaves the turn untouched.
pub fn fault_hook(plan: FaultPlan) -> OracleHook {
    Box::new(move |turn, text, calls| match plan.get(&turn) {
        Some(fault) => apply_fault(fault, text, calls.clone()).unwrap_or(OracleAction::Calls(calls)),
        None => OracleAction::Calls(calls),
    })
}

/// Oracle backend that misbehaves on the planned turns.
pub fn faulty_oracle(spec: Arc<MachineSpec>, plan: FaultPlan) -> OracleBackend {
    OracleBackend::with_hook(spec, fault_hook(plan))
}

/// Pre-recorded assistant replies for a whole suite run, with the planned
/// faults baked in. Replaying them with the scripted backend reproduces the
/// faulty run without the interpreter.
pub fn scripted_transcript(
    suite: &BenchmarkSuite,
    spec: &MachineSpec,
    plan: &FaultPlan,
) -> Result<Vec<ChatMessage>, FaultError> {
    let mut replies = Vec::new();
    for cmd in &suite.commands {
        let calls = oracle_interpret(&cmd.text, spec)?;
        let action = match plan.get(&cmd.index) {
            Some(fault) => apply_fault(fault, &cmd.text, calls).ok_or_else(|| FaultError::NotApplicable {
                index: cmd.index,
                fault: format!("{fault:?}"),
                reason: "no matching tool call".into(),
            })?,
            None => OracleAction::Calls(calls),
        };
        let rounds = match action {
            OracleAction::Calls(calls) => vec![calls],
            OracleAction::Rounds(rounds) => rounds,
            OracleAction::Reply(text) => {
                replies.push(ChatMessage::assistant(text));
                continue;
            }
        };
        for (r, calls) in rounds.into_iter().enumerate() {
            let calls = calls
                .into_iter()
                .enumerate()
                .map(|(n, c)| ToolCall {
                    call_id: format!("call_{}_{}_{}", cmd.index, r + 1, n + 1),
                    ..c
                })
                .collect();
            replies.push(ChatMessage::assistant_calls(calls));
        }
        replies.push(ChatMessage::assistant("Done."));
    }
    Ok(replies)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(tool: &str, args: Value) -> ToolCall {
        ToolCall::new("c", tool, args)
    }

    #[test]
    fn rewrites() {
        let adjust = call(ADJUST_NODE, json!({"parameter": "motorspeed", "delta": -10}));
        let write = call(WRITE_NODE, json!({"parameter": "motorspeed", "value": 30}));
        let pct = call(ADJUST_NODE, json!({"parameter": "motorspeed", "percent": 12.5}));

        let Some(OracleAction::Calls(c)) = apply_fault(&Fault::SignFlip, "", vec![adjust.clone()]) else { panic!() };
        assert_eq!(c[0].arguments["delta"], json!(10));
        let Some(OracleAction::Calls(c)) = apply_fault(&Fault::SignFlip, "", vec![pct]) else { panic!() };
        assert_eq!(c[0].arguments["percent"], json!(-12.5));

        let Some(OracleAction::Calls(c)) = apply_fault(&Fault::VerbMisread, "", vec![write.clone(), adjust.clone()]) else { panic!() };
        assert_eq!(c[1], call(WRITE_NODE, json!({"parameter": "motorspeed", "value": 10})));

        let Some(OracleAction::Calls(c)) = apply_fault(&Fault::ToolMisread, "", vec![write.clone()]) else { panic!() };
        assert_eq!(c[0], call(ADJUST_NODE, json!({"parameter": "motorspeed", "delta": 30})));

        let Some(OracleAction::Reply(q)) = apply_fault(&Fault::CallbackQuestion, "x", vec![]) else { panic!() };
        assert!(q.ends_with('?'));

        let Some(OracleAction::Rounds(r)) = apply_fault(&Fault::Duplicate, "", vec![adjust.clone()]) else { panic!() };
        assert_eq!(r, vec![vec![adjust.clone()], vec![adjust]]);

        assert_eq!(apply_fault(&Fault::SignFlip, "", vec![write.clone()]), None);
        assert_eq!(apply_fault(&Fault::ToolMisread, "", vec![]), None);
    }
}
