//! Newline-delimited JSON protocol spoken by the simulator.
//!
//! Request:  `{"id": <int>, "op": "read"|"write", "node": "ns=4;i=12", "value": ...}`
//! Response: `{"id": <int|null>, "status": "Good"|..., "value": ...}`

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{AddressSpace, Status};
use crate::node::{parse_node_id, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WireStatus {
    Good,
    BadNodeIdUnknown,
    BadTypeMismatch,
    BadOutOfRange,
    BadRequest,
}

impl From<Status> for WireStatus {
    fn from(status: Status) -> Self {
        match status {
            Status::Good => WireStatus::Good,
            Status::BadNodeIdUnknown => WireStatus::BadNodeIdUnknown,
            Status::BadTypeMismatch => WireStatus::BadTypeMismatch,
            Status::BadOutOfRange => WireStatus::BadOutOfRange,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Read,
    Write(Value),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub id: i64,
    pub node: NodeId,
    pub op: Op,
}

#[derive(Serialize)]
struct RequestLine<'a> {
    id: i64,
    op: &'static str,
    node: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    value: Option<&'a Value>,
}

impl Request {
    pub fn to_line(&self) -> String {
        let (op, value) = match &self.op {
            Op::Read => ("read", None),
            Op::Write(v) => ("write", Some(v)),
        };
        serde_json::to_string(&RequestLine {
            id: self.id,
            op,
            node: self.node.to_string(),
            value,
        })
        .expect("request is always serializable")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: Option<i64>,
    pub status: WireStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
}

impl Response {
    fn bad_request(id: Option<i64>) -> Self {
        Self {
            id,
            status: WireStatus::BadRequest,
            value: None,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("response is always serializable")
    }
}

/// Parses one request line. On failure returns the response to send, which
/// echoes the id when one could be recovered.
pub fn parse_request(line: &str) -> Result<Request, Response> {
    let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(line) else {
        return Err(Response::bad_request(None));
    };
    let id = obj.get("id").and_then(Value::as_i64);
    let bad = || Response::bad_request(id);
    let id_value = id.ok_or_else(bad)?;
    let node = obj
        .get("node")
        .and_then(Value::as_str)
        .and_then(|s| parse_node_id(s).ok())
        .ok_or_else(bad)?;
    let op = match obj.get("op").and_then(Value::as_str) {
        Some("read") => Op::Read,
        Some("write") => Op::Write(obj.get("value").cloned().ok_or_else(bad)?),
        _ => return Err(bad()),
    };
    Ok(Request {
        id: id_value,
        node,
        op,
    })
}

/// Executes one request line against the space and renders the response.
pub fn handle_line(space: &AddressSpace, line: &str) -> Response {
    let request = match parse_request(line) {
        Ok(r) => r,
        Err(response) => return response,
    };
    match request.op {
        Op::Read => {
            let outcome = space.read(request.node);
            Response {
                id: Some(request.id),
                status: outcome.status.into(),
                value: outcome.value.map(|v| v.to_json()),
            }
        }
        Op::Write(value) => Response {
            id: Some(request.id),
            status: space.write_json(request.node, &value).into(),
            value: None,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::reference_space;

    #[test]
    fn protocol_examples() {
        let space = reference_space();
        let cases = [
            (
                r#"{"id":1,"op":"read","node":"ns=4;i=12"}"#,
                r#"{"id":1,"status":"Good","value":20}"#,
            ),
            (
                r#"{"id":2,"op":"write","node":"ns=4;i=12","value":"hot"}"#,
                r#"{"id":2,"status":"BadTypeMismatch"}"#,
            ),
            ("not json", r#"{"id":null,"status":"BadRequest"}"#),
            (
                r#"{"id":3,"op":"read","node":"ns=9;i=99"}"#,
                r#"{"id":3,"status":"BadNodeIdUnknown"}"#,
            ),
            (
                r#"{"id":4,"op":"write","node":"ns=4;i=12","value":40000}"#,
                r#"{"id":4,"status":"BadOutOfRange"}"#,
            ),
            (
                r#"{"id":5,"op":"delete","node":"ns=4;i=12"}"#,
                r#"{"id":5,"status":"BadRequest"}"#,
            ),
            (
                r#"{"id":6,"op":"write","node":"ns=4;i=12"}"#,
                r#"{"id":6,"status":"BadRequest"}"#,
            ),
            (
                r#"{"id":7,"op":"read","node":"ns=4;s=temp"}"#,
                r#"{"id":7,"status":"BadRequest"}"#,
            ),
            (
                r#"{"op":"read","node":"ns=4;i=12"}"#,
                r#"{"id":null,"status":"BadRequest"}"#,
            ),
            (
                r#"{"id":8,"op":"write","node":"ns=4;i=11","value":5000.0}"#,
                r#"{"id":8,"status":"Good"}"#,
            ),
            (
                r#"{"id":9,"op":"read","node":"ns=4;i=11"}"#,
                r#"{"id":9,"status":"Good","value":5000.0}"#,
            ),
        ];
        for (request, expected) in cases {
            assert_eq!(handle_line(&space, request).to_line(), expected, "{request}");
        }
    }

    #[test]
    fn request_lines_parse_back() {
        let req = Request {
            id: 42,
            node: NodeId::new(4, 13),
            op: Op::Write(Value::from("Done")),
        };
        assert_eq!(
            req.to_line(),
            r#"{"id":42,"op":"write","node":"ns=4;i=13","value":"Done"}"#
        );
        assert_eq!(parse_request(&req.to_line()).unwrap(), req);
    }
}
