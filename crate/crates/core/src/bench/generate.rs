//! Seeded random suites in the grammar the rule-based interpreter accepts.
//! Used to exercise the harness beyond the fixed reference suite.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::{json, Map, Value};

use super::{load_suite, BenchmarkCommand, BenchmarkSuite, Effect, EffectOp, SuiteError};
use crate::machine::{MachineSpec, NodeSpec};
use crate::node::DataType;

const WORDS: [&str; 5] = ["Ready", "Hold", "Batch 9", "Check valve", "OK"];

fn phrases(node: &NodeSpec) -> Vec<&str> {
    std::iter::once(node.name.as_str())
        .chain(node.aliases.iter().map(String::as_str).filter(|a| a.chars().count() > 1))
        .collect()
}

fn clause(rng: &mut StdRng, node: &NodeSpec) -> (String, Effect) {
    let names = phrases(node);
    let alias = names[rng.gen_range(0..names.len())];
    let parameter = node.name.as_str();
    if node.dtype == DataType::Text {
        let word = WORDS[rng.gen_range(0..WORDS.len())];
        let text = match rng.gen_range(0..3) {
            0 => format!("{alias} = '{word}'"),
            1 => format!("set {alias} to \"{word}\""),
            _ => format!("write '{word}' into {alias}"),
        };
        return (text, Effect::new(parameter, EffectOp::Set, word));
    }
    // Int16 steps stay small so long suites cannot drift out of range.
    let small = node.dtype == DataType::Int16;
    match rng.gen_range(0..4) {
        0 => {
            let n = rng.gen_range(1..=if small { 20 } else { 500 });
            let verb = ["Raise", "Increase", "Add", "Boost"][rng.gen_range(0..4)];
            (format!("{verb} {alias} by {n}"), Effect::new(parameter, EffectOp::Add, n))
        }
        1 => {
            let n: i64 = rng.gen_range(1..=if small { 20 } else { 500 });
            let verb = ["Drop", "Reduce", "Lower", "Decrease"][rng.gen_range(0..4)];
            (format!("{verb} {alias} by {n}"), Effect::new(parameter, EffectOp::Add, -n))
        }
        2 => {
            let p: u32 = rng.gen_range(1..=if small { 5 } else { 30 });
            let up = rng.gen_bool(0.5);
            let verb = if up { "Increase" } else { "Reduce" };
            let factor = if up { 100 + p } else { 100 - p };
            let factor = f64::from(factor) / 100.0;
            (format!("{verb} {alias} by {p}%"), Effect::new(parameter, EffectOp::Scale, factor))
        }
        _ => {
            let v: i64 = if small { rng.gen_range(-100..100) } else { rng.gen_range(0..6000) };
            let text = if rng.gen_bool(0.5) {
                format!("set {alias} to {v}")
            } else {
                format!("{alias} = {v}")
            };
            (text, Effect::new(parameter, EffectOp::Set, v))
        }
    }
}

/// A suite of `len` commands, each touching between one and four distinct
/// parameters. Float32 parameters start at 1000.0, Int16 at 20, Text empty.
pub fn random_suite(spec: &MachineSpec, seed: u64, len: usize) -> Result<BenchmarkSuite, SuiteError> {
    let mut rng = StdRng::seed_from_u64(seed);
    let max_level = spec.nodes().len().clamp(1, 4);
    let mut commands = Vec::with_capacity(len);
    for index in 1..=len {
        let level = rng.gen_range(1..=max_level);
        let mut pool: Vec<&NodeSpec> = spec.nodes().iter().collect();
        let chosen: Vec<&NodeSpec> = (0..level).map(|_| pool.remove(rng.gen_range(0..pool.len()))).collect();
        let (texts, effects): (Vec<String>, Vec<Effect>) = chosen.iter().map(|n| clause(&mut rng, n)).unzip();
        let joiner = if rng.gen_bool(0.5) { ", " } else { " and " };
        commands.push(BenchmarkCommand {
            index,
            level: level as u8,
            text: texts.join(joiner),
            effects,
        });
    }
    let initial: Map<String, Value> = spec
        .nodes()
        .iter()
        .filter_map(|n| match n.dtype {
            DataType::Float32 => Some((n.name.clone(), json!(1000.0))),
            DataType::Int16 => Some((n.name.clone(), json!(20))),
            DataType::Text => None,
        })
        .collect();
    let doc = json!({"initial_state": initial, "commands": commands});
    load_suite(&doc.to_string(), spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::reference_spec;

    #[test]
    fn same_seed_same_suite() {
        let spec = reference_spec();
        let a = random_suite(&spec, 3, 20).unwrap();
        assert_eq!(a, random_suite(&spec, 3, 20).unwrap());
        assert_ne!(a, random_suite(&spec, 4, 20).unwrap());
        assert_eq!(a.commands.len(), 20);
        for cmd in &a.commands {
            assert_eq!(cmd.touched().len(), cmd.level as usize);
        }
    }
}
