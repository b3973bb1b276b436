//! Machine client: one session per endpoint, backed by the in-process
//! simulator, the simulator's TCP protocol, or an externally supplied OPC UA
//! transport.
//!
//! The endpoint scheme picks the backend:
//!
//! | scheme        | backend                                           |
//! |---------------|---------------------------------------------------|
//! | `inproc://n`  | address space registered under `n`                |
//! | `sim-tcp://a` | simulator listening on `a` (host:port)            |
//! | `opc.tcp://…` | connector installed with [`set_opcua_connector`]  |

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::{Mutex, OnceLock, RwLock};
use std::time::Duration;

use thiserror::Error;

use crate::machine::MachineCredentials;
use crate::node::{NodeId, TypedValue};
use crate::sim::wire::{Op, Request, Response, WireStatus};
use crate::sim::{AddressSpace, Status};

const CONNECT_TIMEOUT: Duration = Duration::from_secs(3);
const IO_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    InProcess,
    SimTcp,
    ExternalOpcUa,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("endpoint {0} is unreachable")]
    Unreachable(String),
    #[error("authentication failed for {0}")]
    AuthFailed(String),
    #[error("unsupported endpoint scheme in {0:?}")]
    UnsupportedScheme(String),
    #[error("no OPC UA transport is installed for {0}")]
    BackendUnavailable(String),
    #[error("node {0} is unknown to the server")]
    NodeUnknown(NodeId),
    #[error("server rejected the value type for node {0}")]
    TypeMismatch(NodeId),
    #[error("value out of range for node {0}")]
    OutOfRange(NodeId),
    #[error("session is closed")]
    SessionClosed,
    #[error("transport error: {0}")]
    Transport(String),
}

impl ClientError {
    fn from_status(status: Status, id: NodeId) -> Result<(), Self> {
        match status {
            Status::Good => Ok(()),
            Status::BadNodeIdUnknown => Err(ClientError::NodeUnknown(id)),
            Status::BadTypeMismatch => Err(ClientError::TypeMismatch(id)),
            Status::BadOutOfRange => Err(ClientError::OutOfRange(id)),
        }
    }
}

/// Extension point for a real OPC UA stack.
pub trait NodeTransport: Send {
    fn read(&mut self, id: NodeId) -> Result<TypedValue, ClientError>;
    fn write(&mut self, id: NodeId, value: &TypedValue) -> Result<(), ClientError>;
}

pub type OpcUaConnector =
    fn(&MachineCredentials) -> Result<Box<dyn NodeTransport>, ClientError>;

fn inproc_registry() -> &'static Mutex<HashMap<String, AddressSpace>> {
    static REGISTRY: OnceLock<Mutex<HashMap<String, AddressSpace>>> = OnceLock::new();
    REGISTRY.get_or_init(Default::default)
}

fn opcua_connector() -> &'static RwLock<Option<OpcUaConnector>> {
    static CONNECTOR: RwLock<Option<OpcUaConnector>> = RwLock::new(None);
    &CONNECTOR
}

/// Makes `space` reachable as `inproc://<name>`. Replaces any previous
/// registration under the same name.
pub fn register_in_process(name: impl Into<String>, space: AddressSpace) {
    inproc_registry()
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .insert(name.into(), space);
}

pub fn unregister_in_process(name: &str) -> Option<AddressSpace> {
    inproc_registry()
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .remove(name)
}

/// Installs the transport used for `opc.tcp://` endpoints.
pub fn set_opcua_connector(connector: Option<OpcUaConnector>) {
    *opcua_connector().write().unwrap_or_else(|e| e.into_inner()) = connector;
}

struct TcpConn {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_id: i64,
}

impl TcpConn {
    fn call(&mut self, op: Op, node: NodeId) -> Result<Response, ClientError> {
        let id = self.next_id;
        self.next_id += 1;
        let mut line = Request { id, node, op }.to_line();
        line.push('\n');
        let io = |e: std::io::Error| ClientError::Transport(e.to_string());
        self.writer.write_all(line.as_bytes()).map_err(io)?;
        let mut reply = String::new();
        if self.reader.read_line(&mut reply).map_err(io)? == 0 {
            return Err(ClientError::Transport("server closed the connection".into()));
        }
        let response: Response = serde_json::from_str(&reply)
            .map_err(|e| ClientError::Transport(format!("malformed response: {e}")))?;
        if response.id != Some(id) {
            return Err(ClientError::Transport(format!(
                "response id {:?} does not match request id {id}",
                response.id
            )));
        }
        Ok(response)
    }
}

fn wire_result(status: WireStatus, id: NodeId) -> Result<(), ClientError> {
    let status = match status {
        WireStatus::Good => Status::Good,
        WireStatus::BadNodeIdUnknown => Status::BadNodeIdUnknown,
        WireStatus::BadTypeMismatch => Status::BadTypeMismatch,
        WireStatus::BadOutOfRange => Status::BadOutOfRange,
        WireStatus::BadRequest => {
            return Err(ClientError::Transport("server answered BadRequest".into()))
        }
    };
    ClientError::from_status(status, id)
}

enum Conn {
    InProcess(AddressSpace),
    Tcp(TcpConn),
    External(Box<dyn NodeTransport>),
}

/// An open connection to one machine endpoint.
pub struct Session {
    endpoint: String,
    kind: BackendKind,
    conn: Option<Conn>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("endpoint", &self.endpoint)
            .field("kind", &self.kind)
            .field("open", &self.is_open())
            .finish()
    }
}

pub fn connect(credentials: &MachineCredentials) -> Result<Session, ClientError> {
    let endpoint = credentials.endpoint.trim();
    let (scheme, rest) = endpoint
        .split_once("://")
        .ok_or_else(|| ClientError::UnsupportedScheme(endpoint.to_string()))?;
    let (kind, conn) = match scheme {
        "inproc" => {
            let space = inproc_registry()
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .get(rest)
                .cloned()
                .ok_or_else(|| ClientError::Unreachable(endpoint.to_string()))?;
            (BackendKind::InProcess, Conn::InProcess(space))
        }
        "sim-tcp" => {
            let unreachable = || ClientError::Unreachable(endpoint.to_string());
            let addr = rest
                .trim_end_matches('/')
                .to_socket_addrs()
                .map_err(|_| unreachable())?
                .next()
                .ok_or_else(unreachable)?;
            let stream =
                TcpStream::connect_timeout(&addr, CONNECT_TIMEOUT).map_err(|_| unreachable())?;
            let _ = stream.set_nodelay(true);
            stream
                .set_read_timeout(Some(IO_TIMEOUT))
                .and_then(|_| stream.set_write_timeout(Some(IO_TIMEOUT)))
                .map_err(|e| ClientError::Transport(e.to_string()))?;
            let writer = stream
                .try_clone()
                .map_err(|e| ClientError::Transport(e.to_string()))?;
            (
                BackendKind::SimTcp,
                Conn::Tcp(TcpConn {
                    reader: BufReader::new(stream),
                    writer,
                    next_id: 1,
                }),
            )
        }
        "opc.tcp" => {
            let connector = *opcua_connector().read().unwrap_or_else(|e| e.into_inner());
            let connector =
                connector.ok_or_else(|| ClientError::BackendUnavailable(endpoint.to_string()))?;
            (BackendKind::ExternalOpcUa, Conn::External(connector(credentials)?))
        }
        _ => return Err(ClientError::UnsupportedScheme(endpoint.to_string())),
    };
    Ok(Session {
        endpoint: endpoint.to_string(),
        kind,
        conn: Some(conn),
    })
}

impl Session {
    /// Session bound directly to an address space, without going through the
    /// in-process registry.
    pub fn in_process(space: AddressSpace) -> Self {
        Self {
            endpoint: "inproc://<direct>".into(),
            kind: BackendKind::InProcess,
            conn: Some(Conn::InProcess(space)),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn kind(&self) -> BackendKind {
        self.kind
    }

    pub fn is_open(&self) -> bool {
        self.conn.is_some()
    }

    pub fn close(&mut self) {
        if let Some(Conn::Tcp(tcp)) = self.conn.take() {
            let _ = tcp.writer.shutdown(std::net::Shutdown::Both);
        }
    }

    pub fn read_value(&mut self, id: NodeId) -> Result<TypedValue, ClientError> {
        match self.conn.as_mut().ok_or(ClientError::SessionClosed)? {
            Conn::InProcess(space) => {
                let outcome = space.read(id);
                ClientError::from_status(outcome.status, id)?;
                outcome
                    .value
                    .ok_or_else(|| ClientError::Transport("Good read without a value".into()))
            }
            Conn::Tcp(tcp) => {
                let response = tcp.call(Op::Read, id)?;
                wire_result(response.status, id)?;
                let raw = response
                    .value
                    .ok_or_else(|| ClientError::Transport("Good read without a value".into()))?;
                serde_json::from_value(raw)
                    .map_err(|e| ClientError::Transport(format!("undecodable value: {e}")))
            }
            Conn::External(transport) => transport.read(id),
        }
    }

    pub fn write_value(&mut self, id: NodeId, value: &TypedValue) -> Result<(), ClientError> {
        let conn = self.conn.as_mut().ok_or(ClientError::SessionClosed)?;
        if matches!(value, TypedValue::Float32(v) if !v.is_finite()) {
            return Err(ClientError::OutOfRange(id));
        }
        match conn {
            Conn::InProcess(space) => ClientError::from_status(space.write(id, value.clone()), id),
            Conn::Tcp(tcp) => {
                let response = tcp.call(Op::Write(value.to_json()), id)?;
                wire_result(response.status, id)
            }
            Conn::External(transport) => transport.write(id, value),
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.close();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::reference_space;

    const TEMP: NodeId = NodeId::new(4, 12);
    const SPEED: NodeId = NodeId::new(4, 11);
    const TF1: NodeId = NodeId::new(4, 14);

    #[test]
    fn scheme_selection() {
        assert!(matches!(
            connect(&MachineCredentials::new("ftp://x")),
            Err(ClientError::UnsupportedScheme(_))
        ));
        assert!(matches!(
            connect(&MachineCredentials::new("localhost:4850")),
            Err(ClientError::UnsupportedScheme(_))
        ));
        assert!(matches!(
            connect(&MachineCredentials::new("sim-tcp://127.0.0.1:1")),
            Err(ClientError::Unreachable(_))
        ));
        assert!(matches!(
            connect(&MachineCredentials::new("inproc://nobody-registered-this")),
            Err(ClientError::Unreachable(_))
        ));
        assert!(matches!(
            connect(&MachineCredentials::new("opc.tcp://192.168.0.1:4840")),
            Err(ClientError::BackendUnavailable(_))
        ));
    }

    #[test]
    fn in_process_round_trip() {
        register_in_process("client-unit", reference_space());
        let mut s = connect(&MachineCredentials::new("inproc://client-unit")).unwrap();
        assert_eq!(s.kind(), BackendKind::InProcess);
        s.write_value(SPEED, &TypedValue::Float32(5000.0)).unwrap();
        assert_eq!(s.read_value(SPEED).unwrap(), TypedValue::Float32(5000.0));
        s.write_value(TEMP, &TypedValue::Int16(0)).unwrap();
        assert_eq!(
            s.write_value(TF1, &TypedValue::Float32(1.5)),
            Err(ClientError::TypeMismatch(TF1))
        );
        assert_eq!(
            s.read_value(NodeId::new(9, 99)),
            Err(ClientError::NodeUnknown(NodeId::new(9, 99)))
        );
        assert_eq!(
            s.write_value(SPEED, &TypedValue::Float32(f32::NAN)),
            Err(ClientError::OutOfRange(SPEED))
        );
        s.close();
        s.close();
        assert_eq!(s.read_value(TEMP), Err(ClientError::SessionClosed));
        assert_eq!(
            s.write_value(TEMP, &TypedValue::Int16(1)),
            Err(ClientError::SessionClosed)
        );
        unregister_in_process("client-unit");
    }
}
