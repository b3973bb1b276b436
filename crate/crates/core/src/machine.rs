//! Machine description: the nodes dictionary plus the credentials needed to
//! reach the machine's server.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::node::{parse_node_id, DataType, NodeId};

pub const REDACTED: &str = "***";

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub name: String,
    pub node_id: NodeId,
    pub dtype: DataType,
    /// Alternative spellings operators use for this parameter ("speed", "tf1").
    pub aliases: Vec<String>,
    /// Display unit, also stripped from numbers by the command interpreter.
    pub unit: Option<String>,
}

impl NodeSpec {
    pub fn new(name: impl Into<String>, node_id: NodeId, dtype: DataType) -> Self {
        Self {
            name: name.into(),
            node_id,
            dtype,
            aliases: Vec::new(),
            unit: None,
        }
    }
}

#[derive(Clone, PartialEq)]
pub struct MachineCredentials {
    pub endpoint: String,
    pub username: Option<String>,
    pub secret: Option<String>,
}

impl MachineCredentials {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            username: None,
            secret: None,
        }
    }

    pub fn redacted(&self) -> Self {
        Self {
            endpoint: self.endpoint.clone(),
            username: self.username.clone(),
            secret: self.secret.as_ref().map(|_| REDACTED.to_string()),
        }
    }
}

impl fmt::Debug for MachineCredentials {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MachineCredentials")
            .field("endpoint", &self.endpoint)
            .field("username", &self.username)
            .field("secret", &self.secret.as_ref().map(|_| REDACTED))
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MachineSpec {
    pub machine_name: String,
    nodes: Vec<NodeSpec>,
    pub credentials: MachineCredentials,
}

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("failed to parse machine config: {0}")]
    Parse(String),
    #[error("failed to read machine config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("duplicate node {0}")]
    DuplicateNode(String),
    #[error(transparent)]
    UnknownDataType(#[from] crate::node::UnknownDataType),
    #[error("machine config must list at least one node")]
    NoNodes,
    #[error("machine config has an empty {0}")]
    Empty(&'static str),
}

impl MachineSpec {
    pub fn new(
        machine_name: impl Into<String>,
        nodes: Vec<NodeSpec>,
        credentials: MachineCredentials,
    ) -> Result<Self, SpecError> {
        if nodes.is_empty() {
            return Err(SpecError::NoNodes);
        }
        if credentials.endpoint.trim().is_empty() {
            return Err(SpecError::Empty("endpoint"));
        }
        let mut names = HashSet::new();
        let mut ids = HashSet::new();
        for node in &nodes {
            if node.name.trim().is_empty() {
                return Err(SpecError::Empty("node name"));
            }
            if !names.insert(node.name.as_str()) {
                return Err(SpecError::DuplicateNode(format!("name {:?}", node.name)));
            }
            if !ids.insert(node.node_id) {
                return Err(SpecError::DuplicateNode(format!("NodeId {}", node.node_id)));
            }
        }
        Ok(Self {
            machine_name: machine_name.into(),
            nodes,
            credentials,
        })
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn by_name(&self, name: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn by_node_id(&self, id: NodeId) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.node_id == id)
    }

    /// Resolves a parameter by name, falling back to a canonical NodeId string.
    pub fn resolve(&self, parameter: &str) -> Option<&NodeSpec> {
        let parameter = parameter.trim();
        self.by_name(parameter).or_else(|| {
            parse_node_id(parameter)
                .ok()
                .and_then(|id| self.by_node_id(id))
        })
    }

    /// Copy safe to hand out over the API: the secret is masked.
    pub fn redacted(&self) -> Self {
        Self {
            credentials: self.credentials.redacted(),
            ..self.clone()
        }
    }

    pub fn to_document(&self) -> MachineDocument {
        MachineDocument {
            machine_name: self.machine_name.clone(),
            endpoint: self.credentials.endpoint.clone(),
            username: self.credentials.username.clone(),
            secret: self.credentials.secret.clone(),
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeDocument {
                    name: n.name.clone(),
                    node_id: n.node_id.to_string(),
                    dtype: n.dtype.to_string(),
                    aliases: n.aliases.clone(),
                    unit: n.unit.clone(),
                })
                .collect(),
        }
    }
}

/// On-disk shape of a machine configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineDocument {
    pub machine_name: String,
    pub endpoint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub username: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secret: Option<String>,
    pub nodes: Vec<NodeDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDocument {
    pub name: String,
    pub node_id: String,
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

impl Serialize for MachineSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_document().serialize(serializer)
    }
}

impl TryFrom<MachineDocument> for MachineSpec {
    type Error = SpecError;

    fn try_from(doc: MachineDocument) -> Result<Self, SpecError> {
        let nodes = doc
            .nodes
            .into_iter()
            .map(|n| {
                Ok(NodeSpec {
                    node_id: parse_node_id(&n.node_id)
                        .map_err(|e| SpecError::Parse(e.to_string()))?,
                    dtype: n.dtype.parse()?,
                    name: n.name,
                    aliases: n.aliases,
                    unit: n.unit,
                })
            })
            .collect::<Result<Vec<_>, SpecError>>()?;
        MachineSpec::new(
            doc.machine_name,
            nodes,
            MachineCredentials {
                endpoint: doc.endpoint,
                username: doc.username,
                secret: doc.secret,
            },
        )
    }
}

pub fn load_machine_spec(document: &str) -> Result<MachineSpec, SpecError> {
    let doc: MachineDocument =
        serde_json::from_str(document).map_err(|e| SpecError::Parse(e.to_string()))?;
    doc.try_into()
}

pub fn load_machine_spec_file(path: impl AsRef<Path>) -> Result<MachineSpec, SpecError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SpecError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_machine_spec(&text)
}
