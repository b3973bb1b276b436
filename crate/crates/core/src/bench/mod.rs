//! Benchmark harness: a suite of commands with ground-truth effects, run as
//! one conversation, scored all-or-nothing against the machine state logged
//! after every prompt.
//!
//! Expectations chain from the actual state before each command, so a wrong
//! command never drags the following ones down with it.

pub mod faults;
pub mod generate;
mod oracle;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::info;

use crate::agent::{run_turn, AgentConfig, ChatMessage, LlmBackend, TurnTrace};
use crate::arith::{apply_change, ArithError, Change};
use crate::client::{ClientError, Session};
use crate::machine::MachineSpec;
use crate::node::{coerce, CoerceError, DataType, TypedValue};
use crate::sim::{AddressSpace, SimError, Snapshot};
use crate::tools::{ToolCall, Toolbox, ADJUST_NODE, WRITE_NODE};

pub use oracle::{oracle_interpret, UnparsableCommand};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectOp {
    /// Replace the value.
    Set,
    /// Add a signed delta.
    Add,
    /// Multiply by a factor (0.5 for "drop by 50%").
    Scale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Effect {
    pub parameter: String,
    pub op: EffectOp,
    pub value: Value,
}

impl Effect {
    pub fn new(parameter: impl Into<String>, op: EffectOp, value: impl Into<Value>) -> Self {
        Self {
            parameter: parameter.into(),
            op,
            value: value.into(),
        }
    }

    fn number(&self) -> Option<f64> {
        self.value.as_f64()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkCommand {
    pub index: usize,
    pub level: u8,
    pub text: String,
    pub effects: Vec<Effect>,
}

impl BenchmarkCommand {
    pub fn touched(&self) -> BTreeSet<&str> {
        self.effects.iter().map(|e| e.parameter.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSuite {
    #[serde(default)]
    pub initial_state: BTreeMap<String, Value>,
    pub commands: Vec<BenchmarkCommand>,
    /// Machine config path, relative to the suite file.
    #[serde(default, rename = "machine", skip_serializing_if = "Option::is_none")]
    pub spec_ref: Option<String>,
}

impl BenchmarkSuite {
    pub fn level_counts(&self) -> BTreeMap<u8, usize> {
        let mut counts = BTreeMap::new();
        for cmd in &self.commands {
            *counts.entry(cmd.level).or_default() += 1;
        }
        counts
    }

    /// The full initial snapshot: declared values, defaults for the rest.
    pub fn initial_snapshot(&self, spec: &MachineSpec) -> Result<Snapshot, SuiteError> {
        let mut snap = Snapshot::default();
        for node in spec.nodes() {
            let value = match self.initial_state.get(&node.name) {
                Some(raw) => coerce(raw, node.dtype).map_err(|source| SuiteError::InitialState {
                    parameter: node.name.clone(),
                    reason: source.to_string(),
                })?,
                None => node.dtype.default_value(),
            };
            snap.insert(node.name.clone(), value);
        }
        Ok(snap)
    }
}

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("failed to parse suite: {0}")]
    Parse(String),
    #[error("failed to read suite {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("command {index}: level {level} but {touched} parameters touched")]
    LevelMismatch { index: usize, level: u8, touched: usize },
    #[error("command {index}: unknown parameter {parameter:?}")]
    UnknownParameter { index: usize, parameter: String },
    #[error("command {index}: {reason}")]
    InvalidEffect { index: usize, reason: String },
    #[error("command at position {position} has index {index}; indices must run 1..N")]
    BadIndex { position: usize, index: usize },
    #[error("initial state for {parameter}: {reason}")]
    InitialState { parameter: String, reason: String },
}

/// Parses and validates a suite against the machine it targets.
pub fn load_suite(document: &str, spec: &MachineSpec) -> Result<BenchmarkSuite, SuiteError> {
    let suite: BenchmarkSuite =
        serde_json::from_str(document).map_err(|e| SuiteError::Parse(e.to_string()))?;
    for name in suite.initial_state.keys() {
        if spec.by_name(name).is_none() {
            return Err(SuiteError::UnknownParameter {
                index: 0,
                parameter: name.clone(),
            });
        }
    }
    suite.initial_snapshot(spec)?;
    for (position, cmd) in suite.commands.iter().enumerate() {
        if cmd.index != position + 1 {
            return Err(SuiteError::BadIndex {
                position: position + 1,
                index: cmd.index,
            });
        }
        validate_command(cmd, spec)?;
    }
    Ok(suite)
}

pub fn load_suite_file(path: impl AsRef<Path>, spec: &MachineSpec) -> Result<BenchmarkSuite, SuiteError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SuiteError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_suite(&text, spec)
}

fn validate_command(cmd: &BenchmarkCommand, spec: &MachineSpec) -> Result<(), SuiteError> {
    let invalid = |reason: String| SuiteError::InvalidEffect {
        index: cmd.index,
        reason,
    };
    if !(1..=4).contains(&cmd.level) {
        return Err(invalid(format!("level {} outside 1..4", cmd.level)));
    }
    if cmd.effects.is_empty() {
        return Err(invalid("no effects".into()));
    }
    for effect in &cmd.effects {
        let node = spec.by_name(&effect.parameter).ok_or_else(|| SuiteError::UnknownParameter {
            index: cmd.index,
            parameter: effect.parameter.clone(),
        })?;
        match effect.op {
            EffectOp::Set => {
                coerce(&effect.value, node.dtype)
                    .map_err(|e| invalid(format!("set {}: {e}", effect.parameter)))?;
            }
            EffectOp::Add | EffectOp::Scale => {
                if node.dtype == DataType::Text {
                    return Err(invalid(format!("{:?} on Text node {}", effect.op, effect.parameter)));
                }
                if !effect.number().is_some_and(f64::is_finite) {
                    return Err(invalid(format!("{:?} needs a number", effect.op)));
                }
            }
        }
    }
    let touched = cmd.touched().len();
    if touched != usize::from(cmd.level) {
        return Err(SuiteError::LevelMismatch {
            index: cmd.index,
            level: cmd.level,
            touched,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EffectError {
    #[error("{op:?} is not defined for Text parameter {parameter}")]
    TypeError { parameter: String, op: EffectOp },
    #[error("parameter {0} is not in the snapshot")]
    UnknownParameter(String),
    #[error("{parameter}: {source}")]
    Coerce { parameter: String, source: CoerceError },
    #[error("{parameter}: {source}")]
    Arith { parameter: String, source: ArithError },
    #[error("{parameter}: effect value is not a number")]
    NotANumber { parameter: String },
}

fn apply_effect(state: &mut Snapshot, effect: &Effect) -> Result<(), EffectError> {
    let parameter = &effect.parameter;
    let current = state
        .get(parameter)
        .ok_or_else(|| EffectError::UnknownParameter(parameter.clone()))?;
    let next = match effect.op {
        EffectOp::Set => coerce(&effect.value, current.dtype()).map_err(|source| EffectError::Coerce {
            parameter: parameter.clone(),
            source,
        })?,
        op => {
            if current.dtype() == DataType::Text {
                return Err(EffectError::TypeError {
                    parameter: parameter.clone(),
                    op,
                });
            }
            let x = effect.number().ok_or_else(|| EffectError::NotANumber {
                parameter: parameter.clone(),
            })?;
            let change = if op == EffectOp::Add { Change::Add(x) } else { Change::Scale(x) };
            apply_change(current, change).map_err(|source| EffectError::Arith {
                parameter: parameter.clone(),
                source,
            })?
        }
    };
    state.insert(parameter.clone(), next);
    Ok(())
}

/// Applies `effects` in order to `pre`; untouched parameters are copied.
pub fn expected_state(pre: &Snapshot, effects: &[Effect]) -> Result<Snapshot, EffectError> {
    let mut state = pre.clone();
    for effect in effects {
        apply_effect(&mut state, effect)?;
    }
    Ok(state)
}

/// Float32: `|a - b| <= max(1e-3, 1e-6 * |b|)`; Int16 and Text: exact.
pub fn values_match(actual: &TypedValue, expected: &TypedValue) -> bool {
    match (actual, expected) {
        (TypedValue::Float32(a), TypedValue::Float32(b)) => {
            let (a, b) = (f64::from(*a), f64::from(*b));
            (a - b).abs() <= f64::max(1e-3, 1e-6 * b.abs())
        }
        (a, b) => a == b,
    }
}

pub fn snapshots_match(actual: &Snapshot, expected: &Snapshot) -> bool {
    actual.0.len() == expected.0.len()
        && expected
            .iter()
            .all(|(name, want)| actual.get(name).is_some_and(|got| values_match(got, want)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorCategory {
    SignError,
    RepeatedExecution,
    CallbackQuestion,
    VerbMisread,
    ToolMisread,
    Unclassified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub index: usize,
    pub level: u8,
    pub text: String,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<ErrorCategory>,
    /// Free-text remarks such as further matching categories.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub pre_state: Snapshot,
    pub post_state: Snapshot,
    /// Absent when the effects cannot be applied to the actual pre-state.
    pub expected_state: Option<Snapshot>,
    pub trace: TurnTrace,
}

/// Scores one command against the state before and after its prompt.
pub fn score_command(
    cmd: &BenchmarkCommand,
    pre: &Snapshot,
    post: &Snapshot,
    trace: &TurnTrace,
    spec: &MachineSpec,
) -> Verdict {
    let expected = expected_state(pre, &cmd.effects);
    let mut note = None;
    let correct = match &expected {
        Ok(exp) => trace.call_count() > 0 && snapshots_match(post, exp),
        Err(e) => {
            note = Some(format!("effects not applicable to the actual state: {e}"));
            false
        }
    };
    let expected = expected.ok();
    let mut category = None;
    if !correct {
        let matches = matching_categories(cmd, pre, post, expected.as_ref(), trace, spec);
        category = Some(matches.first().copied().unwrap_or(ErrorCategory::Unclassified));
        if matches.len() > 1 {
            let others: Vec<String> = matches[1..].iter().map(|c| format!("{c:?}")).collect();
            note = Some(format!("also matches {}", others.join(", ")));
        }
    }
    Verdict {
        index: cmd.index,
        level: cmd.level,
        text: cmd.text.clone(),
        correct,
        category,
        note,
        pre_state: pre.clone(),
        post_state: post.clone(),
        expected_state: expected,
        trace: trace.clone(),
    }
}

/// First matching category for an incorrect verdict.
pub fn classify_error(
    cmd: &BenchmarkCommand,
    pre: &Snapshot,
    post: &Snapshot,
    expected: Option<&Snapshot>,
    trace: &TurnTrace,
    spec: &MachineSpec,
) -> ErrorCategory {
    matching_categories(cmd, pre, post, expected, trace, spec)
        .first()
        .copied()
        .unwrap_or(ErrorCategory::Unclassified)
}

struct Evidence<'a> {
    cmd: &'a BenchmarkCommand,
    pre: &'a Snapshot,
    post: &'a Snapshot,
    expected: Option<&'a Snapshot>,
    calls: Vec<(&'a ToolCall, Option<&'a str>)>,
}

impl Evidence<'_> {
    fn deviates(&self, parameter: &str) -> bool {
        match (self.expected.and_then(|e| e.get(parameter)), self.post.get(parameter)) {
            (Some(want), Some(got)) => !values_match(got, want),
            _ => true,
        }
    }

    /// Whether the post value of effect `i`'s parameter equals what the
    /// effects give with effect `i` replaced by `replacement`.
    fn explained_by(&self, i: usize, replacement: &[Effect]) -> bool {
        let parameter = &self.cmd.effects[i].parameter;
        if !self.deviates(parameter) {
            return false;
        }
        let mut variant: Vec<Effect> = self.cmd.effects[..i].to_vec();
        variant.extend_from_slice(replacement);
        variant.extend_from_slice(&self.cmd.effects[i + 1..]);
        match (expected_state(self.pre, &variant), self.post.get(parameter)) {
            (Ok(alt), Some(got)) => alt.get(parameter).is_some_and(|v| values_match(got, v)),
            _ => false,
        }
    }

    fn calls_on<'s>(&'s self, parameter: &'s str, tool: &'s str) -> impl Iterator<Item = &'s ToolCall> + 's {
        self.calls
            .iter()
            .filter(move |(c, p)| c.tool == tool && *p == Some(parameter))
            .map(|(c, _)| *c)
    }
}

fn numbers_equal(a: Option<f64>, b: f64) -> bool {
    a.is_some_and(|a| (a - b).abs() <= f64::max(1e-9, 1e-9 * b.abs()))
}

/// Every category whose rule matches, in rule order.
pub fn matching_categories(
    cmd: &BenchmarkCommand,
    pre: &Snapshot,
    post: &Snapshot,
    expected: Option<&Snapshot>,
    trace: &TurnTrace,
    spec: &MachineSpec,
) -> Vec<ErrorCategory> {
    let calls = trace
        .tool_calls()
        .map(|c| {
            let parameter = c.arguments["parameter"]
                .as_str()
                .and_then(|p| spec.resolve(p))
                .map(|n| n.name.as_str());
            (c, parameter)
        })
        .collect();
    let ev = Evidence {
        cmd,
        pre,
        post,
        expected,
        calls,
    };
    let effects = &cmd.effects;
    let mut found = Vec::new();

    let sign = effects.iter().enumerate().any(|(i, e)| match (e.op, e.number()) {
        (EffectOp::Add, Some(d)) if d != 0.0 => ev.explained_by(i, &[Effect::new(&e.parameter, EffectOp::Add, -d)]),
        (EffectOp::Scale, Some(f)) if f != 1.0 => {
            ev.explained_by(i, &[Effect::new(&e.parameter, EffectOp::Scale, 2.0 - f)])
        }
        _ => false,
    });
    if sign {
        found.push(ErrorCategory::SignError);
    }

    let duplicated = ev
        .calls
        .iter()
        .enumerate()
        .any(|(i, (a, _))| ev.calls[i + 1..].iter().any(|(b, _)| a.tool == b.tool && a.arguments == b.arguments));
    let repeated = duplicated
        && effects.iter().enumerate().any(|(i, e)| {
            e.op != EffectOp::Set && ev.explained_by(i, &[e.clone(), e.clone()])
        });
    if repeated {
        found.push(ErrorCategory::RepeatedExecution);
    }

    let question = trace.final_text.trim_end().ends_with('?') || trace.aborted;
    if trace.call_count() == 0 && question {
        found.push(ErrorCategory::CallbackQuestion);
    }

    let adjust_delta_is = |parameter: &str, v: f64| {
        ev.calls_on(parameter, ADJUST_NODE)
            .any(|c| numbers_equal(c.arguments.get("delta").and_then(Value::as_f64), v))
    };
    let write_value_is = |parameter: &str, v: f64| {
        ev.calls_on(parameter, WRITE_NODE)
            .any(|c| numbers_equal(c.arguments.get("value").and_then(Value::as_f64), v))
    };

    let verb = effects.iter().enumerate().any(|(i, e)| {
        let Some(x) = e.number() else { return false };
        match e.op {
            EffectOp::Add => [x, x.abs()]
                .iter()
                .any(|&v| ev.explained_by(i, &[Effect::new(&e.parameter, EffectOp::Set, v)])),
            // an adjust carrying the target as its delta is a tool misread
            EffectOp::Set => {
                !adjust_delta_is(&e.parameter, x)
                    && ev.explained_by(i, &[Effect::new(&e.parameter, EffectOp::Add, x)])
            }
            EffectOp::Scale => false,
        }
    });
    if verb {
        found.push(ErrorCategory::VerbMisread);
    }

    let tool = effects.iter().any(|e| {
        let Some(x) = e.number() else { return false };
        ev.deviates(&e.parameter)
            && match e.op {
                EffectOp::Set => adjust_delta_is(&e.parameter, x),
                EffectOp::Add => write_value_is(&e.parameter, x),
                EffectOp::Scale => false,
            }
    });
    if tool {
        found.push(ErrorCategory::ToolMisread);
    }
    found
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
}

impl Accuracy {
    pub fn ratio(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }

    /// Exact comparison with `numerator / denominator`.
    pub fn equals(&self, numerator: u64, denominator: u64) -> bool {
        self.correct as u128 * u128::from(denominator) == u128::from(numerator) * self.total as u128
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BenchError {
    #[error("suite has no commands")]
    EmptySuite,
    #[error("machine error: {0}")]
    Machine(#[from] ClientError),
    #[error(transparent)]
    Simulator(#[from] SimErrorText),
    #[error("{0}")]
    Suite(String),
}

/// Simulator errors carried as text so `BenchError` stays comparable.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct SimErrorText(pub String);

impl From<SimError> for BenchError {
    fn from(e: SimError) -> Self {
        BenchError::Simulator(SimErrorText(e.to_string()))
    }
}

impl From<SuiteError> for BenchError {
    fn from(e: SuiteError) -> Self {
        BenchError::Suite(e.to_string())
    }
}

pub fn accuracy(verdicts: &[Verdict]) -> Result<Accuracy, BenchError> {
    if verdicts.is_empty() {
        return Err(BenchError::EmptySuite);
    }
    Ok(Accuracy {
        correct: verdicts.iter().filter(|v| v.correct).count(),
        total: verdicts.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub backend: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub per_level: BTreeMap<u8, LevelStats>,
    pub category_counts: BTreeMap<String, usize>,
    pub initial_state: Snapshot,
    pub verdicts: Vec<Verdict>,
    /// Machine snapshot after each prompt.
    pub state_log: Vec<Snapshot>,
}

impl BenchReport {
    pub fn from_verdicts(backend: impl Into<String>, initial_state: Snapshot, verdicts: Vec<Verdict>) -> Self {
        let state_log = verdicts.iter().map(|v| v.post_state.clone()).collect();
        let mut per_level: BTreeMap<u8, LevelStats> = BTreeMap::new();
        let mut category_counts = BTreeMap::new();
        for v in &verdicts {
            let stats = per_level.entry(v.level).or_insert(LevelStats {
                correct: 0,
                total: 0,
                accuracy: 0.0,
            });
            stats.total += 1;
            stats.correct += usize::from(v.correct);
            if let Some(c) = v.category {
                *category_counts.entry(format!("{c:?}")).or_default() += 1;
            }
        }
        for stats in per_level.values_mut() {
            stats.accuracy = stats.correct as f64 / stats.total as f64;
        }
        let correct = verdicts.iter().filter(|v| v.correct).count();
        let total = verdicts.len();
        Self {
            backend: backend.into(),
            correct,
            total,
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            per_level,
            category_counts,
            initial_state,
            verdicts,
            state_log,
        }
    }

    pub fn accuracy(&self) -> Result<Accuracy, BenchError> {
        accuracy(&self.verdicts)
    }
}

/// Resets the machine to the suite's initial state and issues every command
/// in index order as one conversation. Backend failures become incorrect
/// verdicts; only machine failures stop the run.
pub fn run_suite(
    config: &AgentConfig,
    backend: &mut dyn LlmBackend,
    backend_label: &str,
    toolbox: &Toolbox,
    suite: &BenchmarkSuite,
) -> Result<BenchReport, BenchError> {
    let initial = suite.initial_snapshot(toolbox.spec())?;
    toolbox.restore(&initial)?;
    let mut history: Vec<ChatMessage> = Vec::new();
    let mut verdicts = Vec::with_capacity(suite.commands.len());
    for cmd in &suite.commands {
        let pre = toolbox.snapshot()?;
        let trace = run_turn(config, backend, toolbox, &mut history, &cmd.text);
        let post = toolbox.snapshot()?;
        let verdict = score_command(cmd, &pre, &post, &trace, toolbox.spec());
        info!(index = cmd.index, correct = verdict.correct, category = ?verdict.category, "command scored");
        verdicts.push(verdict);
    }
    Ok(BenchReport::from_verdicts(backend_label, initial, verdicts))
}

/// Runs the suite against a fresh in-process simulator.
pub fn run_suite_in_memory(
    config: &AgentConfig,
    backend: &mut dyn LlmBackend,
    backend_label: &str,
    spec: Arc<MachineSpec>,
    suite: &BenchmarkSuite,
) -> Result<BenchReport, BenchError> {
    let space = AddressSpace::create(&spec, &suite.initial_state)?;
    let toolbox = Toolbox::new(spec, Session::in_process(space));
    run_suite(config, backend, backend_label, &toolbox, suite)
}
