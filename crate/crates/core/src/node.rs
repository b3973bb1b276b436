//! Node addressing and the typed values stored in a machine's address space.

use std::fmt;
use std::str::FromStr;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Numeric OPC UA-style node identifier, canonically written `ns=<n>;i=<m>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub namespace: u32,
    pub identifier: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed NodeId {input:?}: expected `ns=<uint>;i=<uint>`")]
pub struct MalformedNodeId {
    pub input: String,
}

impl NodeId {
    pub const fn new(namespace: u32, identifier: u32) -> Self {
        Self {
            namespace,
            identifier,
        }
    }
}

fn parse_component(text: &str) -> Option<u32> {
    if text.is_empty() || !text.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    text.parse().ok()
}

/// Parses the canonical NodeId grammar. Surrounding whitespace is trimmed;
/// anything else (string/GUID identifiers, other separators) is rejected.
pub fn parse_node_id(text: &str) -> Result<NodeId, MalformedNodeId> {
    let malformed = || MalformedNodeId {
        input: text.to_string(),
    };
    let rest = text.trim().strip_prefix("ns=").ok_or_else(malformed)?;
    let (ns, id) = rest.split_once(";i=").ok_or_else(malformed)?;
    Ok(NodeId {
        namespace: parse_component(ns).ok_or_else(malformed)?,
        identifier: parse_component(id).ok_or_else(malformed)?,
    })
}

pub fn format_node_id(id: NodeId) -> String {
    id.to_string()
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ns={};i={}", self.namespace, self.identifier)
    }
}

impl FromStr for NodeId {
    type Err = MalformedNodeId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_node_id(s)
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_node_id(&text).map_err(de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DataType {
    /// 32-bit IEEE float (Siemens REAL).
    Float32,
    Int16,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown data type {0:?} (expected Float32, Int16 or Text)")]
pub struct UnknownDataType(pub String);

impl DataType {
    pub const ALL: [DataType; 3] = [DataType::Float32, DataType::Int16, DataType::Text];

    pub fn as_str(self) -> &'static str {
        match self {
            DataType::Float32 => "Float32",
            DataType::Int16 => "Int16",
            DataType::Text => "Text",
        }
    }

    pub fn is_numeric(self) -> bool {
        !matches!(self, DataType::Text)
    }

    /// Value a node holds when nothing else was configured.
    pub fn default_value(self) -> TypedValue {
        match self {
            DataType::Float32 => TypedValue::Float32(0.0),
            DataType::Int16 => TypedValue::Int16(0),
            DataType::Text => TypedValue::Text(String::new()),
        }
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DataType {
    type Err = UnknownDataType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DataType::ALL
            .into_iter()
            .find(|dt| dt.as_str() == s)
            .ok_or_else(|| UnknownDataType(s.to_string()))
    }
}

impl Serialize for DataType {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for DataType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(de::Error::custom)
    }
}

/// A runtime value tagged with its data type.
///
/// Serializes untagged: Float32 as a JSON float, Int16 as a JSON integer,
/// Text as a JSON string.
#[derive(Debug, Clone, PartialEq)]
pub enum TypedValue {
    Float32(f32),
    Int16(i16),
    Text(String),
}

impl TypedValue {
    pub fn dtype(&self) -> DataType {
        match self {
            TypedValue::Float32(_) => DataType::Float32,
            TypedValue::Int16(_) => DataType::Int16,
            TypedValue::Text(_) => DataType::Text,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            TypedValue::Float32(v) => Some(f32_to_f64_shortest(*v)),
            TypedValue::Int16(v) => Some(f64::from(*v)),
            TypedValue::Text(_) => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            TypedValue::Text(s) => Some(s),
            _ => None,
        }
    }

    /// JSON form used on the wire and in reports.
    pub fn to_json(&self) -> Value {
        match self {
            TypedValue::Float32(v) => serde_json::Number::from_f64(f32_to_f64_shortest(*v))
                .map(Value::Number)
                .unwrap_or(Value::Null),
            TypedValue::Int16(v) => Value::from(*v),
            TypedValue::Text(s) => Value::String(s.clone()),
        }
    }
}

impl fmt::Display for TypedValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypedValue::Float32(v) => write!(f, "{v}"),
            TypedValue::Int16(v) => write!(f, "{v}"),
            TypedValue::Text(s) => write!(f, "{s:?}"),
        }
    }
}

/// Widens an f32 to the f64 with the same shortest decimal representation,
/// so `0.1f32` becomes `0.1` rather than `0.10000000149011612`.
pub fn f32_to_f64_shortest(v: f32) -> f64 {
    if !v.is_finite() {
        return f64::from(v);
    }
    v.to_string().parse().unwrap_or(f64::from(v))
}

impl Serialize for TypedValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            TypedValue::Float32(v) => serializer.serialize_f64(f32_to_f64_shortest(*v)),
            TypedValue::Int16(v) => serializer.serialize_i16(*v),
            TypedValue::Text(s) => serializer.serialize_str(s),
        }
    }
}

impl<'de> Deserialize<'de> for TypedValue {
    /// Infers the variant from the JSON token: integer tokens in range become
    /// Int16, other numbers Float32, strings Text.
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = Value::deserialize(deserializer)?;
        infer_typed(&raw).map_err(de::Error::custom)
    }
}

fn infer_typed(raw: &Value) -> Result<TypedValue, CoerceError> {
    match raw {
        Value::String(_) => coerce(raw, DataType::Text),
        Value::Number(n) if n.is_f64() => coerce(raw, DataType::Float32),
        Value::Number(_) => coerce(raw, DataType::Int16),
        other => Err(CoerceError::TypeMismatch {
            expected: DataType::Float32,
            found: json_kind(other),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoerceError {
    #[error("type mismatch: {expected} node cannot hold {found}")]
    TypeMismatch {
        expected: DataType,
        found: &'static str,
    },
    #[error("value {value} is outside the Int16 range [-32768, 32767]")]
    OutOfRange { value: String },
    #[error("value {value} is not a finite Float32")]
    NotFinite { value: String },
}

pub(crate) fn json_kind(raw: &Value) -> &'static str {
    match raw {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(n) if n.is_f64() => "a non-integral number",
        Value::Number(_) => "an integer",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

/// Strictly converts a raw JSON scalar into a value of `dtype`.
///
/// No string/number conversion happens in either direction. Int16 accepts
/// integral numbers only (5.0 is 5, 5.5 is rejected).
pub fn coerce(raw: &Value, dtype: DataType) -> Result<TypedValue, CoerceError> {
    let mismatch = || CoerceError::TypeMismatch {
        expected: dtype,
        found: json_kind(raw),
    };
    match (dtype, raw) {
        (DataType::Text, Value::String(s)) => Ok(TypedValue::Text(s.clone())),
        (DataType::Text, _) => Err(mismatch()),
        (DataType::Float32, Value::Number(n)) => {
            let v = n.as_f64().ok_or_else(mismatch)?;
            coerce_f64(v, DataType::Float32)
        }
        (DataType::Int16, Value::Number(n)) => {
            if let Some(i) = n.as_i64() {
                return i16::try_from(i)
                    .map(TypedValue::Int16)
                    .map_err(|_| CoerceError::OutOfRange {
                        value: i.to_string(),
                    });
            }
            if n.is_u64() {
                return Err(CoerceError::OutOfRange {
                    value: n.to_string(),
                });
            }
            let v = n.as_f64().ok_or_else(mismatch)?;
            coerce_f64(v, DataType::Int16)
        }
        _ => Err(mismatch()),
    }
}

/// Numeric counterpart of [`coerce`] for values computed in f64.
pub fn coerce_f64(v: f64, dtype: DataType) -> Result<TypedValue, CoerceError> {
    match dtype {
        DataType::Float32 => {
            let narrowed = v as f32;
            if !v.is_finite() || !narrowed.is_finite() {
                return Err(CoerceError::NotFinite {
                    value: v.to_string(),
                });
            }
            Ok(TypedValue::Float32(narrowed))
        }
        DataType::Int16 => {
            if !v.is_finite() || v.fract() != 0.0 {
                return Err(CoerceError::TypeMismatch {
                    expected: DataType::Int16,
                    found: "a non-integral number",
                });
            }
            if v < f64::from(i16::MIN) || v > f64::from(i16::MAX) {
                return Err(CoerceError::OutOfRange {
                    value: v.to_string(),
                });
            }
            Ok(TypedValue::Int16(v as i16))
        }
        DataType::Text => Err(CoerceError::TypeMismatch {
            expected: DataType::Text,
            found: "a number",
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    #[test]
    fn parses_reference_node_ids() {
        assert_eq!(parse_node_id("ns=4;i=12").unwrap(), NodeId::new(4, 12));
        assert_eq!(parse_node_id("ns=4;i=11").unwrap(), NodeId::new(4, 11));
        assert_eq!(parse_node_id("  ns=4;i=13\n").unwrap(), NodeId::new(4, 13));
    }

    #[test]
    fn rejects_malformed_node_ids() {
        for bad in [
            "ns=4,i=12",
            "ns=4;s=temperature",
            "ns=4;g=09087e75-8e5e-499b-954f-f2a9603db28a",
            "ns=;i=1",
            "ns=4;i=",
            "ns=-1;i=2",
            "ns=+1;i=2",
            "ns=4 ;i=12",
            "ns=4;i=12;",
            "i=12",
            "ns=4294967296;i=1",
            "",
        ] {
            assert!(parse_node_id(bad).is_err(), "{bad:?} should be rejected");
        }
    }

    #[test]
    fn formats_canonically() {
        assert_eq!(format_node_id(NodeId::new(4, 12)), "ns=4;i=12");
        assert_eq!(format_node_id(NodeId::new(0, 0)), "ns=0;i=0");
        assert_eq!(parse_node_id("ns=004;i=0012").unwrap().to_string(), "ns=4;i=12");
    }

    proptest! {
        #[test]
        fn node_id_round_trip(ns in any::<u32>(), id in any::<u32>()) {
            let node = NodeId::new(ns, id);
            prop_assert_eq!(parse_node_id(&format_node_id(node)).unwrap(), node);
        }

        #[test]
        fn coerce_is_idempotent_on_float(v in -1.0e6f32..1.0e6f32) {
            let tv = TypedValue::Float32(v);
            prop_assert_eq!(coerce(&tv.to_json(), DataType::Float32).unwrap(), tv);
        }

        #[test]
        fn coerce_is_idempotent_on_int(v in any::<i16>()) {
            let tv = TypedValue::Int16(v);
            prop_assert_eq!(coerce(&tv.to_json(), DataType::Int16).unwrap(), tv);
        }

        #[test]
        fn coerce_is_idempotent_on_text(s in ".*") {
            let tv = TypedValue::Text(s);
            prop_assert_eq!(coerce(&tv.to_json(), DataType::Text).unwrap(), tv);
        }

        #[test]
        fn accepted_int16_reads_back_exactly(v in -40000i64..40000) {
            match coerce(&json!(v), DataType::Int16) {
                Ok(TypedValue::Int16(got)) => prop_assert_eq!(i64::from(got), v),
                Ok(other) => prop_assert!(false, "unexpected {other:?}"),
                Err(CoerceError::OutOfRange { .. }) => prop_assert!(!(-32768..=32767).contains(&v)),
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }
    }

    #[test]
    fn coerce_int16_rules() {
        assert_eq!(coerce(&json!(80), DataType::Int16).unwrap(), TypedValue::Int16(80));
        assert_eq!(coerce(&json!(5.0), DataType::Int16).unwrap(), TypedValue::Int16(5));
        assert!(matches!(
            coerce(&json!(5.5), DataType::Int16),
            Err(CoerceError::TypeMismatch { .. })
        ));
        assert!(matches!(
            coerce(&json!(40000), DataType::Int16),
            Err(CoerceError::OutOfRange { .. })
        ));
        assert!(matches!(
            coerce(&json!(u64::MAX), DataType::Int16),
            Err(CoerceError::OutOfRange { .. })
        ));
        assert!(matches!(
            coerce(&json!(-32769.0), DataType::Int16),
            Err(CoerceError::OutOfRange { .. })
        ));
        assert!(matches!(
            coerce(&json!("80"), DataType::Int16),
            Err(CoerceError::TypeMismatch { .. })
        ));
    }

    #[test]
    fn coerce_float_and_text_rules() {
        assert_eq!(
            coerce(&json!(5000), DataType::Float32).unwrap(),
            TypedValue::Float32(5000.0)
        );
        assert!(matches!(
            coerce(&json!(1.0e39), DataType::Float32),
            Err(CoerceError::NotFinite { .. })
        ));
        assert!(matches!(
            coerce_f64(f64::NAN, DataType::Float32),
            Err(CoerceError::NotFinite { .. })
        ));
        assert!(matches!(
            coerce(&json!("fast"), DataType::Float32),
            Err(CoerceError::TypeMismatch { .. })
        ));
        assert!(matches!(
            coerce(&json!(true), DataType::Float32),
            Err(CoerceError::TypeMismatch { .. })
        ));
        assert!(matches!(
            coerce(&json!(1.5), DataType::Text),
            Err(CoerceError::TypeMismatch { .. })
        ));
        assert_eq!(
            coerce(&json!("Warning"), DataType::Text).unwrap(),
            TypedValue::Text("Warning".into())
        );
    }

    #[test]
    fn typed_values_serialize_untagged() {
        let v = serde_json::to_string(&[
            TypedValue::Float32(1000.0),
            TypedValue::Float32(0.1),
            TypedValue::Int16(20),
            TypedValue::Text("x".into()),
        ])
        .unwrap();
        assert_eq!(v, r#"[1000.0,0.1,20,"x"]"#);
        let back: Vec<TypedValue> = serde_json::from_str(&v).unwrap();
        assert_eq!(back[1], TypedValue::Float32(0.1));
        assert_eq!(back[2], TypedValue::Int16(20));
    }

    #[test]
    fn data_type_names() {
        assert_eq!("Int16".parse::<DataType>().unwrap(), DataType::Int16);
        assert!("Int64".parse::<DataType>().is_err());
        assert!("float32".parse::<DataType>().is_err());
    }
}
