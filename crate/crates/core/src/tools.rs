//! The three machine tools exposed to the model: `read_node`, `write_node`
//! and `adjust_node`.
//!
//! Every failure is reported as a not-ok [`ToolResult`] so the agent can feed
//! it back to the model verbatim. Write and adjust read the node back after
//! writing and only report `ok` when the read-back matches.

use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::arith::{apply_change, ArithError, Change};
use crate::client::{ClientError, Session};
use crate::machine::{MachineSpec, NodeSpec};
use crate::node::{coerce, CoerceError, TypedValue};
use crate::sim::Snapshot;

pub const READ_NODE: &str = "read_node";
pub const WRITE_NODE: &str = "write_node";
pub const ADJUST_NODE: &str = "adjust_node";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    String,
    Number,
    NumberOrString,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSpec {
    pub name: &'static str,
    pub kind: ParamKind,
    pub required: bool,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolDescriptor {
    pub name: &'static str,
    pub description: String,
    pub parameters: Vec<ParamSpec>,
    /// Groups of parameters of which exactly one must be supplied.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub exactly_one_of: Vec<Vec<&'static str>>,
}

impl ToolDescriptor {
    /// JSON Schema of the arguments object.
    pub fn parameters_schema(&self) -> Value {
        let mut properties = Map::new();
        for p in &self.parameters {
            let ty = match p.kind {
                ParamKind::String => json!("string"),
                ParamKind::Number => json!("number"),
                ParamKind::NumberOrString => json!(["number", "string"]),
            };
            properties.insert(
                p.name.to_string(),
                json!({"type": ty, "description": p.description}),
            );
        }
        let required: Vec<&str> = self
            .parameters
            .iter()
            .filter(|p| p.required)
            .map(|p| p.name)
            .collect();
        let mut schema = json!({
            "type": "object",
            "properties": properties,
            "required": required,
            "additionalProperties": false,
        });
        if !self.exactly_one_of.is_empty() {
            let one_of: Vec<Value> = self
                .exactly_one_of
                .iter()
                .flat_map(|group| group.iter().map(|name| json!({"required": [name]})))
                .collect();
            schema["oneOf"] = Value::Array(one_of);
        }
        schema
    }

    /// Entry for the `tools` array of a chat-completions request.
    pub fn function_schema(&self) -> Value {
        json!({
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": self.parameters_schema(),
            }
        })
    }
}

pub fn tool_descriptors(spec: &MachineSpec) -> Vec<ToolDescriptor> {
    let names: Vec<&str> = spec.nodes().iter().map(|n| n.name.as_str()).collect();
    let names = names.join(", ");
    let parameter = |verb: &str| ParamSpec {
        name: "parameter",
        kind: ParamKind::String,
        required: true,
        description: format!(
            "Name of the parameter to {verb}, one of: {names}. A NodeId such as ns=4;i=12 is also accepted."
        ),
    };
    vec![
        ToolDescriptor {
            name: READ_NODE,
            description: format!(
                "Read the current value of a machine parameter. Valid parameters: {names}."
            ),
            parameters: vec![parameter("read")],
            exactly_one_of: vec![],
        },
        ToolDescriptor {
            name: WRITE_NODE,
            description: format!(
                "Overwrite a machine parameter with an absolute value and verify it by reading it back. Valid parameters: {names}."
            ),
            parameters: vec![
                parameter("write"),
                ParamSpec {
                    name: "value",
                    kind: ParamKind::NumberOrString,
                    required: true,
                    description: "New value. Numbers for numeric parameters, strings for text parameters. Int16 parameters accept whole numbers only.".into(),
                },
            ],
            exactly_one_of: vec![],
        },
        ToolDescriptor {
            name: ADJUST_NODE,
            description: format!(
                "Change a numeric machine parameter relative to its current value, either by an absolute delta or by a percentage. Use a negative number to decrease. Supply exactly one of delta or percent. Valid parameters: {names}."
            ),
            parameters: vec![
                parameter("adjust"),
                ParamSpec {
                    name: "delta",
                    kind: ParamKind::Number,
                    required: false,
                    description: "Signed amount added to the current value (e.g. -10 to reduce by 10).".into(),
                },
                ParamSpec {
                    name: "percent",
                    kind: ParamKind::Number,
                    required: false,
                    description: "Signed percentage of the current value (e.g. -50 halves it).".into(),
                },
            ],
            exactly_one_of: vec![vec!["delta", "percent"]],
        },
    ]
}

/// A tool invocation requested by the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub call_id: String,
    pub tool: String,
    /// Normally a JSON object; anything else fails validation.
    pub arguments: Value,
}

impl ToolCall {
    pub fn new(call_id: impl Into<String>, tool: impl Into<String>, arguments: Value) -> Self {
        Self {
            call_id: call_id.into(),
            tool: tool.into(),
            arguments,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ToolErrorKind {
    UnknownTool,
    InvalidArguments,
    ArgumentError,
    UnknownParameter,
    TypeMismatch,
    OutOfRange,
    NotNumeric,
    VerificationFailed,
    Transport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub call_id: String,
    pub ok: bool,
    pub parameter: String,
    pub old_value: Option<TypedValue>,
    pub new_value: Option<TypedValue>,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ToolErrorKind>,
}

impl ToolResult {
    fn failure(parameter: &str, kind: ToolErrorKind, message: impl Into<String>) -> Self {
        Self {
            call_id: String::new(),
            ok: false,
            parameter: parameter.to_string(),
            old_value: None,
            new_value: None,
            message: message.into(),
            error: Some(kind),
        }
    }

    /// The object handed back to the model as the tool message content.
    pub fn to_model_json(&self) -> Value {
        json!({
            "ok": self.ok,
            "parameter": self.parameter,
            "old_value": self.old_value,
            "new_value": self.new_value,
            "message": self.message,
        })
    }
}

#[allow(clippy::result_large_err)]
fn resolve<'a>(spec: &'a MachineSpec, parameter: &str) -> Result<&'a NodeSpec, ToolResult> {
    spec.resolve(parameter).ok_or_else(|| {
        let names: Vec<&str> = spec.nodes().iter().map(|n| n.name.as_str()).collect();
        ToolResult::failure(
            parameter,
            ToolErrorKind::UnknownParameter,
            format!(
                "unknown parameter {parameter:?}; valid parameters: {}",
                names.join(", ")
            ),
        )
    })
}

fn transport_failure(parameter: &str, err: ClientError) -> ToolResult {
    let kind = match err {
        ClientError::TypeMismatch(_) => ToolErrorKind::TypeMismatch,
        ClientError::OutOfRange(_) => ToolErrorKind::OutOfRange,
        ClientError::NodeUnknown(_) => ToolErrorKind::UnknownParameter,
        _ => ToolErrorKind::Transport,
    };
    ToolResult::failure(parameter, kind, format!("machine error: {err}"))
}

fn coerce_failure(parameter: &str, err: CoerceError) -> ToolResult {
    let kind = match err {
        CoerceError::TypeMismatch { .. } => ToolErrorKind::TypeMismatch,
        CoerceError::OutOfRange { .. } | CoerceError::NotFinite { .. } => ToolErrorKind::OutOfRange,
    };
    ToolResult::failure(parameter, kind, err.to_string())
}

pub fn exec_read(session: &mut Session, spec: &MachineSpec, parameter: &str) -> ToolResult {
    let node = match resolve(spec, parameter) {
        Ok(n) => n,
        Err(r) => return r,
    };
    match session.read_value(node.node_id) {
        Ok(value) => ToolResult {
            call_id: String::new(),
            ok: true,
            parameter: node.name.clone(),
            message: format!("{} is {value}", node.name),
            old_value: Some(value),
            new_value: None,
            error: None,
        },
        Err(e) => transport_failure(&node.name, e),
    }
}

/// Writes `new`, reads it back and reports the transition from `old`.
fn write_verified(
    session: &mut Session,
    node: &NodeSpec,
    old: TypedValue,
    new: TypedValue,
) -> ToolResult {
    if let Err(e) = session.write_value(node.node_id, &new) {
        return transport_failure(&node.name, e);
    }
    let readback = match session.read_value(node.node_id) {
        Ok(v) => v,
        Err(e) => return transport_failure(&node.name, e),
    };
    if readback != new {
        let mut r = ToolResult::failure(
            &node.name,
            ToolErrorKind::VerificationFailed,
            format!("wrote {new} to {} but read back {readback}", node.name),
        );
        r.old_value = Some(old);
        r.new_value = Some(readback);
        return r;
    }
    ToolResult {
        call_id: String::new(),
        ok: true,
        parameter: node.name.clone(),
        message: format!("{} changed from {old} to {new} (verified)", node.name),
        old_value: Some(old),
        new_value: Some(new),
        error: None,
    }
}

pub fn exec_write(
    session: &mut Session,
    spec: &MachineSpec,
    parameter: &str,
    value: &Value,
) -> ToolResult {
    let node = match resolve(spec, parameter) {
        Ok(n) => n,
        Err(r) => return r,
    };
    let new = match coerce(value, node.dtype) {
        Ok(v) => v,
        Err(e) => return coerce_failure(&node.name, e),
    };
    let old = match session.read_value(node.node_id) {
        Ok(v) => v,
        Err(e) => return transport_failure(&node.name, e),
    };
    write_verified(session, node, old, new)
}

pub fn exec_adjust(
    session: &mut Session,
    spec: &MachineSpec,
    parameter: &str,
    delta: Option<f64>,
    percent: Option<f64>,
) -> ToolResult {
    let change = match (delta, percent) {
        (Some(d), None) => Change::Add(d),
        (None, Some(p)) => Change::Percent(p),
        _ => {
            return ToolResult::failure(
                parameter,
                ToolErrorKind::ArgumentError,
                "supply exactly one of delta or percent",
            )
        }
    };
    let node = match resolve(spec, parameter) {
        Ok(n) => n,
        Err(r) => return r,
    };
    if !node.dtype.is_numeric() {
        return ToolResult::failure(
            &node.name,
            ToolErrorKind::NotNumeric,
            format!("{} is a {} parameter and cannot be adjusted", node.name, node.dtype),
        );
    }
    let old = match session.read_value(node.node_id) {
        Ok(v) => v,
        Err(e) => return transport_failure(&node.name, e),
    };
    let new = match apply_change(&old, change) {
        Ok(v) => v,
        Err(e) => {
            let kind = match e {
                ArithError::NotNumeric(_) => ToolErrorKind::NotNumeric,
                ArithError::OutOfRange(_) | ArithError::NotFinite(_) => ToolErrorKind::OutOfRange,
                ArithError::BadArgument(_) => ToolErrorKind::ArgumentError,
            };
            let mut r = ToolResult::failure(&node.name, kind, e.to_string());
            r.old_value = Some(old);
            return r;
        }
    };
    write_verified(session, node, old, new)
}

fn invalid(parameter: &str, message: impl Into<String>) -> ToolResult {
    ToolResult::failure(parameter, ToolErrorKind::InvalidArguments, message)
}

fn optional_number(args: &Map<String, Value>, key: &str) -> Result<Option<f64>, String> {
    match args.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Number(n)) => Ok(n.as_f64()),
        Some(other) => Err(format!("argument {key:?} must be a number, got {other}")),
    }
}

fn check_keys(args: &Map<String, Value>, allowed: &[&str]) -> Result<(), String> {
    match args.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(extra) => Err(format!("unexpected argument {extra:?}")),
        None => Ok(()),
    }
}

/// Validates a call against its descriptor and runs it.
pub fn dispatch(session: &mut Session, spec: &MachineSpec, call: &ToolCall) -> ToolResult {
    let mut result = dispatch_inner(session, spec, call);
    result.call_id = call.call_id.clone();
    result
}

fn dispatch_inner(session: &mut Session, spec: &MachineSpec, call: &ToolCall) -> ToolResult {
    let allowed: &[&str] = match call.tool.as_str() {
        READ_NODE => &["parameter"],
        WRITE_NODE => &["parameter", "value"],
        ADJUST_NODE => &["parameter", "delta", "percent"],
        other => {
            return ToolResult::failure(
                "",
                ToolErrorKind::UnknownTool,
                format!("unknown tool {other:?}; available tools: {READ_NODE}, {WRITE_NODE}, {ADJUST_NODE}"),
            )
        }
    };
    let Value::Object(args) = &call.arguments else {
        return invalid("", "arguments must be a JSON object");
    };
    let parameter = match args.get("parameter") {
        Some(Value::String(p)) => p.as_str(),
        Some(_) => return invalid("", "argument \"parameter\" must be a string"),
        None => return invalid("", "missing required argument \"parameter\""),
    };
    if let Err(msg) = check_keys(args, allowed) {
        return invalid(parameter, msg);
    }
    match call.tool.as_str() {
        READ_NODE => exec_read(session, spec, parameter),
        WRITE_NODE => match args.get("value") {
            Some(v @ (Value::Number(_) | Value::String(_))) => {
                exec_write(session, spec, parameter, v)
            }
            Some(_) => invalid(parameter, "argument \"value\" must be a number or a string"),
            None => invalid(parameter, "missing required argument \"value\""),
        },
        _ => {
            let delta = optional_number(args, "delta");
            let percent = optional_number(args, "percent");
            match (delta, percent) {
                (Ok(d), Ok(p)) => exec_adjust(session, spec, parameter, d, p),
                (Err(msg), _) | (_, Err(msg)) => invalid(parameter, msg),
            }
        }
    }
}

/// A machine session shared between callers. Each tool execution holds the
/// session for its whole read-write-verify sequence.
#[derive(Debug)]
pub struct Toolbox {
    spec: Arc<MachineSpec>,
    session: Mutex<Session>,
}

impl Toolbox {
    pub fn new(spec: Arc<MachineSpec>, session: Session) -> Self {
        Self {
            spec,
            session: Mutex::new(session),
        }
    }

    pub fn spec(&self) -> &MachineSpec {
        &self.spec
    }

    pub fn shared_spec(&self) -> Arc<MachineSpec> {
        self.spec.clone()
    }

    pub fn descriptors(&self) -> Vec<ToolDescriptor> {
        tool_descriptors(&self.spec)
    }

    fn session(&self) -> MutexGuard<'_, Session> {
        self.session.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn dispatch(&self, call: &ToolCall) -> ToolResult {
        dispatch(&mut self.session(), &self.spec, call)
    }

    /// Reads every parameter of the machine.
    pub fn snapshot(&self) -> Result<Snapshot, ClientError> {
        let mut session = self.session();
        let mut snap = Snapshot::default();
        for node in self.spec.nodes() {
            snap.insert(node.name.clone(), session.read_value(node.node_id)?);
        }
        Ok(snap)
    }

    /// Writes every value of `state` to the machine.
    pub fn restore(&self, state: &Snapshot) -> Result<(), ClientError> {
        let mut session = self.session();
        for (name, value) in state.iter() {
            if let Some(node) = self.spec.by_name(name) {
                session.write_value(node.node_id, value)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{reference_space, reference_spec};
    use crate::AddressSpace;
    use proptest::prelude::*;

    fn fixture() -> (AddressSpace, Session, MachineSpec) {
        let space = reference_space();
        let session = Session::in_process(space.clone());
        (space, session, reference_spec())
    }

    fn call(tool: &str, args: Value) -> ToolCall {
        ToolCall::new("c1", tool, args)
    }

    #[test]
    fn descriptors_cover_all_parameters() {
        let spec = reference_spec();
        let tools = tool_descriptors(&spec);
        assert_eq!(
            tools.iter().map(|t| t.name).collect::<Vec<_>>(),
            [READ_NODE, WRITE_NODE, ADJUST_NODE]
        );
        for tool in &tools {
            for name in ["motorspeed", "temperature", "textfield1", "textfield2"] {
                assert!(tool.description.contains(name), "{} lacks {name}", tool.name);
            }
            assert_eq!(tool.parameters[0].name, "parameter");
            assert!(tool.parameters[0].required);
        }
        let adjust = tools[2].parameters_schema();
        assert_eq!(adjust["required"], json!(["parameter"]));
        assert_eq!(
            adjust["oneOf"],
            json!([{"required": ["delta"]}, {"required": ["percent"]}])
        );
        assert_eq!(tools[1].parameters_schema()["required"], json!(["parameter", "value"]));
        assert_eq!(tool_descriptors(&spec), tools);
        assert_eq!(tools[0].function_schema()["function"]["name"], "read_node");
    }

    #[test]
    fn read_resolves_names_and_node_ids() {
        let (_, mut s, spec) = fixture();
        let by_name = exec_read(&mut s, &spec, "temperature");
        assert!(by_name.ok);
        assert_eq!(by_name.old_value, Some(TypedValue::Int16(20)));
        assert_eq!(exec_read(&mut s, &spec, "ns=4;i=12"), by_name);
        let unknown = exec_read(&mut s, &spec, "pressure");
        assert!(!unknown.ok);
        assert_eq!(unknown.error, Some(ToolErrorKind::UnknownParameter));
        assert!(unknown.message.contains("unknown parameter"));
    }

    #[test]
    fn write_examples() {
        let (space, mut s, spec) = fixture();
        let r = exec_write(&mut s, &spec, "temperature", &json!(80));
        assert!(r.ok, "{}", r.message);
        assert_eq!(r.old_value, Some(TypedValue::Int16(20)));
        assert_eq!(r.new_value, Some(TypedValue::Int16(80)));

        let r = exec_write(&mut s, &spec, "textfield1", &json!("Warning"));
        assert!(r.ok);
        assert_eq!(r.new_value, Some(TypedValue::Text("Warning".into())));

        let before = space.snapshot();
        for (param, value, kind) in [
            ("motorspeed", json!("fast"), ToolErrorKind::TypeMismatch),
            ("temperature", json!(80.5), ToolErrorKind::TypeMismatch),
            ("temperature", json!(40000), ToolErrorKind::OutOfRange),
            ("textfield2", json!(3), ToolErrorKind::TypeMismatch),
            ("pressure", json!(3), ToolErrorKind::UnknownParameter),
        ] {
            let r = exec_write(&mut s, &spec, param, &value);
            assert!(!r.ok);
            assert_eq!(r.error, Some(kind), "{param} {value}");
        }
        assert_eq!(space.snapshot(), before);
    }

    #[test]
    fn adjust_examples() {
        let (space, mut s, spec) = fixture();
        exec_write(&mut s, &spec, "motorspeed", &json!(100.0));
        let r = exec_adjust(&mut s, &spec, "motorspeed", Some(30.0), None);
        assert_eq!(r.new_value, Some(TypedValue::Float32(130.0)));

        exec_write(&mut s, &spec, "motorspeed", &json!(200.0));
        let r = exec_adjust(&mut s, &spec, "motorspeed", None, Some(-50.0));
        assert_eq!(r.old_value, Some(TypedValue::Float32(200.0)));
        assert_eq!(r.new_value, Some(TypedValue::Float32(100.0)));

        exec_write(&mut s, &spec, "temperature", &json!(155));
        let r = exec_adjust(&mut s, &spec, "temperature", None, Some(-10.0));
        assert_eq!(r.new_value, Some(TypedValue::Int16(140)));

        let before = space.snapshot();
        let r = exec_adjust(&mut s, &spec, "textfield1", Some(5.0), None);
        assert_eq!(r.error, Some(ToolErrorKind::NotNumeric));
        let r = exec_adjust(&mut s, &spec, "motorspeed", Some(5.0), Some(5.0));
        assert_eq!(r.error, Some(ToolErrorKind::ArgumentError));
        let r = exec_adjust(&mut s, &spec, "motorspeed", None, None);
        assert_eq!(r.error, Some(ToolErrorKind::ArgumentError));
        let r = exec_adjust(&mut s, &spec, "temperature", Some(40000.0), None);
        assert_eq!(r.error, Some(ToolErrorKind::OutOfRange));
        assert_eq!(space.snapshot(), before);
    }

    #[test]
    fn dispatch_routes_and_validates() {
        let (space, mut s, spec) = fixture();
        let r = dispatch(
            &mut s,
            &spec,
            &call(ADJUST_NODE, json!({"parameter": "motorspeed", "delta": -10})),
        );
        assert!(r.ok);
        assert_eq!(r.call_id, "c1");
        assert_eq!(r.new_value, Some(TypedValue::Float32(990.0)));

        let before = space.snapshot();
        let cases = [
            (call("launch_rocket", json!({})), ToolErrorKind::UnknownTool),
            (
                call(ADJUST_NODE, json!({"parameter": "motorspeed", "delta": 5, "percent": 5})),
                ToolErrorKind::ArgumentError,
            ),
            (call(READ_NODE, json!("temperature")), ToolErrorKind::InvalidArguments),
            (call(READ_NODE, json!({})), ToolErrorKind::InvalidArguments),
            (call(READ_NODE, json!({"parameter": 12})), ToolErrorKind::InvalidArguments),
            (call(WRITE_NODE, json!({"parameter": "temperature"})), ToolErrorKind::InvalidArguments),
            (
                call(WRITE_NODE, json!({"parameter": "temperature", "value": [1]})),
                ToolErrorKind::InvalidArguments,
            ),
            (
                call(WRITE_NODE, json!({"parameter": "temperature", "value": 1, "unit": "C"})),
                ToolErrorKind::InvalidArguments,
            ),
            (
                call(ADJUST_NODE, json!({"parameter": "motorspeed", "delta": "10"})),
                ToolErrorKind::InvalidArguments,
            ),
        ];
        for (c, kind) in cases {
            let r = dispatch(&mut s, &spec, &c);
            assert!(!r.ok);
            assert_eq!(r.error, Some(kind), "{c:?}");
            assert!(!r.message.is_empty());
        }
        assert!(dispatch(&mut s, &spec, &call("launch_rocket", json!({})))
            .message
            .contains("unknown tool"));
        assert_eq!(space.snapshot(), before);

        let r = dispatch(
            &mut s,
            &spec,
            &call(ADJUST_NODE, json!({"parameter": "motorspeed", "delta": null, "percent": 10})),
        );
        assert!(r.ok, "{}", r.message);
    }

    #[test]
    fn model_json_shape() {
        let (_, mut s, spec) = fixture();
        let r = exec_read(&mut s, &spec, "temperature");
        assert_eq!(
            r.to_model_json(),
            json!({"ok": true, "parameter": "temperature", "old_value": 20, "new_value": null, "message": "temperature is 20"})
        );
    }

    proptest! {
        #[test]
        fn write_then_read_round_trip(v in -1.0e6f32..1.0e6, t in any::<i16>(), text in "[ -~]{0,20}") {
            let (_, mut s, spec) = fixture();
            for (param, value) in [("motorspeed", json!(v)), ("temperature", json!(t)), ("textfield2", json!(text))] {
                let w = exec_write(&mut s, &spec, param, &value);
                prop_assert!(w.ok, "{}", w.message);
                prop_assert_eq!(exec_read(&mut s, &spec, param).old_value, w.new_value);
            }
        }
    }
}
