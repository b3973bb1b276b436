//! Natural-language control of PLC parameters.
//!
//! A language model reaches the machine only through three tools
//! (`read_node`, `write_node`, `adjust_node`) that resolve parameter names
//! from the machine's nodes dictionary and talk to its server through a
//! [`client::Session`]. The crate also carries a simulated PLC, the agent
//! loop, and a benchmark harness that scores command suites with a strict
//! all-or-nothing criterion.

pub mod agent;
pub mod arith;
pub mod bench;
pub mod client;
pub mod machine;
pub mod node;
pub mod sim;
pub mod tools;

pub use machine::{load_machine_spec, load_machine_spec_file, MachineCredentials, MachineSpec, NodeSpec};
pub use node::{coerce, format_node_id, parse_node_id, DataType, NodeId, TypedValue};
pub use sim::{AddressSpace, Snapshot, Status};
