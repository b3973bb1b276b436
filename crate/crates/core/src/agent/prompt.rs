use std::fmt::Write;

use crate::machine::{MachineSpec, REDACTED};

/// Fixed opening of every system prompt.
pub const PREAMBLE: &str = "\
You are the control assistant of an industrial machine. Operators give you \
commands in natural language; you carry them out by calling the tools \
read_node, write_node and adjust_node. Each row of <nodes_dictionary> \
reads \"name | node_id | dtype\".

Rules:
- Use only the parameters listed in <nodes_dictionary>, by name or NodeId.
- \"set X to V\" or \"X = V\" means write_node with value V.
- \"raise/increase X by N\" means adjust_node with delta +N; \
\"drop/reduce/lower/decrease X by N\" means delta -N; \
\"by N%\" uses percent instead of delta.
- Execute each requested change exactly once, then answer briefly with the \
resulting values.
- Do not ask for confirmation when a command is unambiguous.";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PromptOptions {
    /// Put the credential secret in clear text into the credential block.
    pub reveal_secret: bool,
}

/// System prompt with the secret redacted.
pub fn build_system_prompt(spec: &MachineSpec) -> String {
    build_system_prompt_with(spec, PromptOptions::default())
}

pub fn build_system_prompt_with(spec: &MachineSpec, options: PromptOptions) -> String {
    let mut out = String::with_capacity(1024);
    out.push_str(PREAMBLE);
    let _ = write!(out, "\n\nMachine: {}\n\n<nodes_dictionary>\n", spec.machine_name);
    for node in spec.nodes() {
        let _ = writeln!(out, "{} | {} | {}", node.name, node.node_id, node.dtype);
    }
    out.push_str("</nodes_dictionary>\n\n<machine_credential_list>\n");
    let creds = &spec.credentials;
    let _ = writeln!(out, "endpoint: {}", creds.endpoint);
    if let Some(user) = &creds.username {
        let _ = writeln!(out, "username: {user}");
    }
    if let Some(secret) = &creds.secret {
        let shown = if options.reveal_secret { secret.as_str() } else { REDACTED };
        let _ = writeln!(out, "secret: {shown}");
    }
    out.push_str("</machine_credential_list>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{MachineCredentials, NodeSpec};
    use crate::testutil::reference_spec;
    use crate::{DataType, NodeId};

    fn block<'a>(prompt: &'a str, tag: &str) -> &'a str {
        let open = format!("<{tag}>\n");
        let start = prompt.find(&open).unwrap() + open.len();
        let end = prompt.find(&format!("</{tag}>")).unwrap();
        &prompt[start..end]
    }

    #[test]
    fn reference_prompt_lists_every_node() {
        let prompt = build_system_prompt(&reference_spec());
        assert!(prompt.starts_with(PREAMBLE));
        assert!(prompt.lines().any(|l| l == "temperature | ns=4;i=12 | Int16"));
        assert!(prompt.lines().any(|l| l == "motorspeed | ns=4;i=11 | Float32"));
        let rows = block(&prompt, "nodes_dictionary").lines().count();
        assert_eq!(rows, 4);
        let creds = block(&prompt, "machine_credential_list");
        assert!(creds.contains("endpoint: inproc://demo-cell"));
        assert!(creds.contains("username: operator"));
        assert!(!prompt.contains("change-me"));
    }

    #[test]
    fn deterministic() {
        assert_eq!(build_system_prompt(&reference_spec()), build_system_prompt(&reference_spec()));
    }

    #[test]
    fn single_node_and_opt_in_secret() {
        let mut creds = MachineCredentials::new("sim-tcp://127.0.0.1:4850");
        creds.secret = Some("hunter2".into());
        let spec = MachineSpec::new(
            "one",
            vec![NodeSpec::new("level", NodeId::new(2, 7), DataType::Float32)],
            creds,
        )
        .unwrap();
        let prompt = build_system_prompt(&spec);
        assert_eq!(block(&prompt, "nodes_dictionary").lines().count(), 1);
        assert!(!prompt.contains("hunter2"));
        assert!(!prompt.contains("username"));
        let revealed = build_system_prompt_with(&spec, PromptOptions { reveal_secret: true });
        assert!(revealed.contains("secret: hunter2"));
    }
}
