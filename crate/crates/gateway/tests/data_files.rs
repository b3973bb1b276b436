//! Checked-in data stays consistent with the code that generates it.

mod common;

use std::collections::BTreeMap;

use plcagent::agent::ChatMessage;
use plcagent::bench::faults::{scripted_transcript, FaultPlan};
use plcagent::bench::load_suite_file;
use plcagent_gateway::{load_config, BackendSettings};

use common::{data_dir, spec};

#[test]
fn scripted_transcripts_match_their_fault_plans() {
    let spec = spec();
    let suite = load_suite_file(data_dir().join("reference_suite.json"), &spec).unwrap();
    let mut checked = 0;
    for entry in std::fs::read_dir(data_dir().join("faults")).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_owned();
        let plan: FaultPlan = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let expected = scripted_transcript(&suite, &spec, &plan).unwrap();
        let script = data_dir().join("scripted").join(&name);
        let stored: Vec<ChatMessage> = serde_json::from_str(&std::fs::read_to_string(&script).unwrap()).unwrap();
        assert_eq!(stored, expected, "{} is stale; regenerate it with `bench script`", script.display());
        checked += 1;
    }
    assert_eq!(checked, 5);
}

#[test]
fn fault_plans_touch_the_documented_commands() {
    let expected: BTreeMap<&str, Vec<usize>> = BTreeMap::from([
        ("model_a.json", vec![1, 26]),
        ("model_b.json", vec![48]),
        ("model_c.json", vec![24, 48]),
        ("model_d.json", vec![1, 9, 19, 37, 48]),
        ("model_e.json", vec![9, 20, 21, 47, 48]),
    ]);
    for (file, indices) in expected {
        let text = std::fs::read_to_string(data_dir().join("faults").join(file)).unwrap();
        let plan: FaultPlan = serde_json::from_str(&text).unwrap();
        assert_eq!(plan.keys().copied().collect::<Vec<_>>(), indices, "{file}");
    }
}

#[test]
fn example_gateway_config_loads() {
    let config = load_config(data_dir().join("gateway.toml")).unwrap();
    assert_eq!(config.backend, BackendSettings::Oracle);
    assert_eq!(config.listen.to_string(), "127.0.0.1:8080");
    assert!(config.suite.unwrap().ends_with("reference_suite.json"));
    assert_eq!(config.initial_state.len(), 2);
}
