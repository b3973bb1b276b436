//! Simulated PLC address space.
//!
//! Stands in for the OPC UA server of the controller. All mutations go
//! through one lock, so every read and write is atomic and the revision
//! counter gives a total order over successful writes.

mod server;
pub mod wire;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::machine::MachineSpec;
use crate::node::{coerce, CoerceError, DataType, NodeId, TypedValue};

pub use server::{serve, ServerHandle};

/// OPC UA-style operation status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Status {
    Good,
    BadNodeIdUnknown,
    BadTypeMismatch,
    BadOutOfRange,
}

impl Status {
    pub fn is_good(self) -> bool {
        self == Status::Good
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Point-in-time copy of every parameter, keyed by name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Snapshot(pub BTreeMap<String, TypedValue>);

impl Snapshot {
    pub fn get(&self, name: &str) -> Option<&TypedValue> {
        self.0.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, value: TypedValue) {
        self.0.insert(name.into(), value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &TypedValue)> {
        self.0.iter()
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("initial value for {parameter}: {source}")]
    TypeMismatch {
        parameter: String,
        source: CoerceError,
    },
    #[error("cannot bind {address}: {source}")]
    BindFailure {
        address: String,
        source: std::io::Error,
    },
}

#[derive(Debug)]
struct Entry {
    name: String,
    dtype: DataType,
    value: TypedValue,
}

#[derive(Debug)]
struct Inner {
    entries: BTreeMap<NodeId, Entry>,
    revision: u64,
}

/// Shared handle to a typed address space. Clones refer to the same space.
#[derive(Debug, Clone)]
pub struct AddressSpace {
    inner: Arc<Mutex<Inner>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadOutcome {
    pub status: Status,
    pub value: Option<TypedValue>,
}

impl AddressSpace {
    /// Builds a space holding exactly the machine's nodes. Parameters missing
    /// from `initial` start at 0, 0.0 or "".
    pub fn create(
        spec: &MachineSpec,
        initial: &BTreeMap<String, Value>,
    ) -> Result<Self, SimError> {
        if let Some(unknown) = initial.keys().find(|k| spec.by_name(k).is_none()) {
            return Err(SimError::UnknownParameter(unknown.clone()));
        }
        let mut entries = BTreeMap::new();
        for node in spec.nodes() {
            let value = match initial.get(&node.name) {
                Some(raw) => coerce(raw, node.dtype).map_err(|source| SimError::TypeMismatch {
                    parameter: node.name.clone(),
                    source,
                })?,
                None => node.dtype.default_value(),
            };
            entries.insert(
                node.node_id,
                Entry {
                    name: node.name.clone(),
                    dtype: node.dtype,
                    value,
                },
            );
        }
        Ok(Self {
            inner: Arc::new(Mutex::new(Inner {
                entries,
                revision: 0,
            })),
        })
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        // a panic while holding the lock cannot leave an entry half-written
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn read(&self, id: NodeId) -> ReadOutcome {
        match self.lock().entries.get(&id) {
            Some(entry) => ReadOutcome {
                status: Status::Good,
                value: Some(entry.value.clone()),
            },
            None => ReadOutcome {
                status: Status::BadNodeIdUnknown,
                value: None,
            },
        }
    }

    pub fn write(&self, id: NodeId, value: TypedValue) -> Status {
        let mut inner = self.lock();
        let Some(entry) = inner.entries.get_mut(&id) else {
            return Status::BadNodeIdUnknown;
        };
        if entry.dtype != value.dtype() {
            return Status::BadTypeMismatch;
        }
        entry.value = value;
        inner.revision += 1;
        Status::Good
    }

    /// Writes a value as it arrives on the wire. The JSON token decides the
    /// variant: integers are Int16, other numbers Float32, strings Text.
    pub fn write_json(&self, id: NodeId, raw: &Value) -> Status {
        let declared = match self.lock().entries.get(&id) {
            Some(entry) => entry.dtype,
            None => return Status::BadNodeIdUnknown,
        };
        match decode_variant(raw, declared) {
            Ok(value) => self.write(id, value),
            Err(status) => status,
        }
    }

    pub fn revision(&self) -> u64 {
        self.lock().revision
    }

    pub fn dtype(&self, id: NodeId) -> Option<DataType> {
        self.lock().entries.get(&id).map(|e| e.dtype)
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot(
            self.lock()
                .entries
                .values()
                .map(|e| (e.name.clone(), e.value.clone()))
                .collect(),
        )
    }
}

fn decode_variant(raw: &Value, declared: DataType) -> Result<TypedValue, Status> {
    let variant = match raw {
        Value::Number(n) if n.is_f64() => DataType::Float32,
        Value::Number(_) => DataType::Int16,
        Value::String(_) => DataType::Text,
        _ => return Err(Status::BadTypeMismatch),
    };
    if variant != declared {
        return Err(Status::BadTypeMismatch);
    }
    coerce(raw, declared).map_err(|e| match e {
        CoerceError::TypeMismatch { .. } => Status::BadTypeMismatch,
        CoerceError::OutOfRange { .. } | CoerceError::NotFinite { .. } => Status::BadOutOfRange,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::reference_spec;
    use serde_json::json;

    fn space() -> AddressSpace {
        let initial = BTreeMap::from([
            ("motorspeed".to_string(), json!(1000.0)),
            ("temperature".to_string(), json!(20)),
        ]);
        AddressSpace::create(&reference_spec(), &initial).unwrap()
    }

    const TEMP: NodeId = NodeId::new(4, 12);
    const SPEED: NodeId = NodeId::new(4, 11);

    #[test]
    fn initial_snapshot() {
        let snap = space().snapshot();
        assert_eq!(
            serde_json::to_value(&snap).unwrap(),
            json!({"motorspeed": 1000.0, "temperature": 20, "textfield1": "", "textfield2": ""})
        );
        let empty = AddressSpace::create(&reference_spec(), &BTreeMap::new()).unwrap();
        assert_eq!(
            serde_json::to_value(empty.snapshot()).unwrap(),
            json!({"motorspeed": 0.0, "temperature": 0, "textfield1": "", "textfield2": ""})
        );
    }

    #[test]
    fn create_rejects_bad_initial_state() {
        let unknown = BTreeMap::from([("pressure".to_string(), json!(5))]);
        assert!(matches!(
            AddressSpace::create(&reference_spec(), &unknown),
            Err(SimError::UnknownParameter(p)) if p == "pressure"
        ));
        let wrong = BTreeMap::from([("temperature".to_string(), json!("hot"))]);
        assert!(matches!(
            AddressSpace::create(&reference_spec(), &wrong),
            Err(SimError::TypeMismatch { .. })
        ));
    }

    #[test]
    fn read_and_write() {
        let s = space();
        assert_eq!(
            s.read(TEMP),
            ReadOutcome {
                status: Status::Good,
                value: Some(TypedValue::Int16(20))
            }
        );
        assert_eq!(s.read(NodeId::new(9, 99)).status, Status::BadNodeIdUnknown);
        assert_eq!(s.read(TEMP), s.read(TEMP));
        assert_eq!(s.revision(), 0);

        assert_eq!(s.write(TEMP, TypedValue::Int16(80)), Status::Good);
        assert_eq!(s.read(TEMP).value, Some(TypedValue::Int16(80)));
        assert_eq!(s.revision(), 1);

        let before = s.snapshot();
        assert_eq!(s.write(SPEED, TypedValue::Text("x".into())), Status::BadTypeMismatch);
        assert_eq!(s.write(NodeId::new(9, 9), TypedValue::Int16(1)), Status::BadNodeIdUnknown);
        assert_eq!(s.snapshot(), before);
        assert_eq!(s.revision(), 1);

        assert_eq!(s.write(SPEED, TypedValue::Float32(5000.0)), Status::Good);
        assert_eq!(s.read(SPEED).value, Some(TypedValue::Float32(5000.0)));
    }

    #[test]
    fn snapshot_is_a_copy() {
        let s = space();
        let snap = s.snapshot();
        s.write(TEMP, TypedValue::Int16(99));
        assert_eq!(snap.get("temperature"), Some(&TypedValue::Int16(20)));
        assert_eq!(s.snapshot().get("temperature"), Some(&TypedValue::Int16(99)));
    }

    #[test]
    fn wire_values_are_typed_by_token() {
        let s = space();
        assert_eq!(s.write_json(TEMP, &json!(40000)), Status::BadOutOfRange);
        assert_eq!(s.write_json(TEMP, &json!(80.0)), Status::BadTypeMismatch);
        assert_eq!(s.write_json(TEMP, &json!("hot")), Status::BadTypeMismatch);
        assert_eq!(s.write_json(SPEED, &json!(5000)), Status::BadTypeMismatch);
        assert_eq!(s.write_json(SPEED, &json!(1.0e39)), Status::BadOutOfRange);
        assert_eq!(s.write_json(SPEED, &json!(true)), Status::BadTypeMismatch);
        assert_eq!(s.revision(), 0);
        assert_eq!(s.write_json(TEMP, &json!(80)), Status::Good);
        assert_eq!(s.write_json(SPEED, &json!(5000.0)), Status::Good);
        assert_eq!(s.revision(), 2);
    }
}
