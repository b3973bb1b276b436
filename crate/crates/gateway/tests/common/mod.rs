//! Helpers shared by the gateway test targets: a gateway served on a free
//! port, a blocking JSON client, and a local chat-completions server backed
//! by the rule-based oracle.
#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::runtime::Runtime;

use plcagent::agent::http::{parse_reply, wire_messages};
use plcagent::agent::{ChatMessage, LlmBackend, OracleBackend};
use plcagent::{load_machine_spec, MachineSpec};
use plcagent_gateway::{load_config_with_env, serve, Gateway, GatewayConfig, ServerHandle};

pub const MACHINE: &str = include_str!("../../../../data/machine.json");

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn spec() -> Arc<MachineSpec> {
    Arc::new(load_machine_spec(MACHINE).unwrap())
}

pub fn runtime() -> Runtime {
    tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .unwrap()
}

/// The example configuration shipped in `data/`. `top` adds top-level keys;
/// `backend` replaces the body of the `[backend]` table.
pub fn example_config(top: &str, backend: Option<&str>) -> GatewayConfig {
    let data = data_dir().canonicalize().unwrap();
    let base = std::fs::read_to_string(data.join("gateway.toml")).unwrap();
    let (head, tail) = base.split_once("[backend]").unwrap();
    let head = head
        .replace("\"machine.json\"", &format!("{:?}", data.join("machine.json")))
        .replace("\"reference_suite.json\"", &format!("{:?}", data.join("reference_suite.json")))
        .replace("\"scripted\"", &format!("{:?}", data.join("scripted")))
        .replace("[initial_state]", &format!("{top}\n[initial_state]"));
    let text = format!("{head}[backend]\n{}", backend.unwrap_or(tail));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gateway.toml");
    std::fs::write(&path, text).unwrap();
    load_config_with_env(&path, &|name| (name == "PLCAGENT_TEST_KEY").then(|| TEST_KEY.to_string())).unwrap()
}

pub const TEST_KEY: &str = "sk-test-key";

/// A gateway served on a free loopback port from its own runtime.
pub struct TestServer {
    pub gateway: Arc<Gateway>,
    pub url: String,
    handle: Option<ServerHandle>,
    rt: Runtime,
    agent: ureq::Agent,
}

pub fn client() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(std::time::Duration::from_secs(60)))
        .build()
        .into()
}

fn decode(mut resp: ureq::http::Response<ureq::Body>) -> (u16, Value) {
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().unwrap();
    let value = serde_json::from_str(&text).unwrap_or(Value::String(text));
    (status, value)
}

impl TestServer {
    pub fn start(gateway: Gateway) -> Self {
        let rt = runtime();
        let gateway = Arc::new(gateway);
        let addr: SocketAddr = "127.0.0.1:0".parse().unwrap();
        let handle = rt.block_on(serve(gateway.clone(), addr)).unwrap();
        Self {
            url: handle.url(),
            gateway,
            handle: Some(handle),
            rt,
            agent: client(),
        }
    }

    pub fn get(&self, path: &str) -> (u16, Value) {
        decode(self.agent.get(format!("{}{path}", self.url)).call().unwrap())
    }

    pub fn post_raw(&self, path: &str, body: &str) -> (u16, Value) {
        let req = self.agent.post(format!("{}{path}", self.url)).header("content-type", "application/json");
        decode(req.send(body).unwrap())
    }

    pub fn post(&self, path: &str, body: Value) -> (u16, Value) {
        self.post_raw(path, &body.to_string())
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(handle) = self.handle.take() {
            let _ = self.rt.block_on(handle.shutdown());
        }
    }
}

/// Turns a request `messages` array back into a history.
pub fn parse_wire_history(messages: &[Value]) -> Vec<ChatMessage> {
    messages
        .iter()
        .map(|m| {
            let content = m["content"].as_str().unwrap_or_default();
            match m["role"].as_str().unwrap() {
                "system" => ChatMessage::system(content),
                "user" => ChatMessage::user(content),
                "tool" => ChatMessage::tool(m["tool_call_id"].as_str().unwrap(), content),
                _ => parse_reply(&json!({"choices": [{"message": m}]})).unwrap(),
            }
        })
        .collect()
}

#[derive(Clone)]
struct MockState {
    oracle: Arc<Mutex<OracleBackend>>,
    key: String,
    requests: Arc<AtomicUsize>,
}

async fn completions(
    State(state): State<MockState>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> Result<Json<Value>, (StatusCode, String)> {
    state.requests.fetch_add(1, Ordering::SeqCst);
    let expected = format!("Bearer {}", state.key);
    if headers.get("authorization").and_then(|v| v.to_str().ok()) != Some(expected.as_str()) {
        return Err((StatusCode::UNAUTHORIZED, "bad key".into()));
    }
    if body["tools"].as_array().map_or(0, Vec::len) != 3 || body["temperature"] != json!(0.0) {
        return Err((StatusCode::BAD_REQUEST, "expected three tools at temperature 0".into()));
    }
    let history = parse_wire_history(body["messages"].as_array().unwrap());
    let reply = state
        .oracle
        .lock()
        .unwrap()
        .complete(&history, &[])
        .map_err(|e| (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let finish = if reply.tool_calls.is_empty() { "stop" } else { "tool_calls" };
    Ok(Json(json!({
        "id": "mock",
        "object": "chat.completion",
        "model": body["model"],
        "choices": [{"index": 0, "message": wire_messages(&[reply])[0], "finish_reason": finish}],
    })))
}

/// A chat-completions endpoint answered by the oracle, requiring `key`.
pub struct MockLlm {
    pub base_url: String,
    pub requests: Arc<AtomicUsize>,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    rt: Runtime,
}

impl MockLlm {
    pub fn start(key: &str) -> Self {
        let rt = runtime();
        let requests = Arc::new(AtomicUsize::new(0));
        let state = MockState {
            oracle: Arc::new(Mutex::new(OracleBackend::new(spec()))),
            key: key.to_string(),
            requests: requests.clone(),
        };
        let app = Router::new().route("/v1/chat/completions", post(completions)).with_state(state);
        let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let addr = listener.local_addr().unwrap();
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        rt.spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = stopped.await;
                })
                .await
                .unwrap();
        });
        Self {
            base_url: format!("http://{addr}/v1"),
            requests,
            stop: Some(stop),
            rt,
        }
    }
}

impl Drop for MockLlm {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        let _ = &self.rt;
    }
}
