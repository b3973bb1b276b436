//! The gateway process: one machine, one toolbox, per-session conversations,
//! and the HTTP/JSON API.
//!
//! All machine access goes through the shared [`Toolbox`]; the gateway keeps
//! no copy of parameter values, so `/api/state` always reflects the machine.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{FromRequest, Request, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::{oneshot, OwnedMutexGuard};
use tower_http::services::ServeDir;
use tower_http::trace::TraceLayer;
use tracing::{info, warn};

use plcagent::agent::{AbortReason, BackendError, Conversation, LlmBackend, OracleBackend, ScriptedBackend, TurnTrace};
use plcagent::bench::{load_suite, load_suite_file, run_suite_in_memory, BenchError, BenchmarkSuite};
use plcagent::client::{connect, ClientError, Session};
use plcagent::sim::SimError;
use plcagent::tools::{ToolCall, Toolbox};
use plcagent::{AddressSpace, MachineSpec};

use crate::backends::{factory_for, BackendFactory};
use crate::config::GatewayConfig;

pub const DEFAULT_SESSION: &str = "default";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("cannot reach the machine: {0}")]
    Machine(#[from] ClientError),
    #[error("cannot start the simulator: {0}")]
    Simulator(#[from] SimError),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
}

type SharedConversation = Arc<tokio::sync::Mutex<Conversation<'static>>>;

pub struct Gateway {
    config: GatewayConfig,
    toolbox: Arc<Toolbox>,
    simulator: Option<AddressSpace>,
    factory: BackendFactory,
    sessions: Mutex<HashMap<String, SharedConversation>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("machine", &self.config.spec.machine_name)
            .field("backend", &self.config.backend.label())
            .finish()
    }
}

impl Gateway {
    /// Connects to the configured machine. An `inproc://` endpoint gets a
    /// fresh simulator owned by this gateway, seeded from `initial_state`.
    pub fn start(config: GatewayConfig) -> Result<Self, GatewayError> {
        let spec = config.spec.clone();
        let (session, simulator) = if spec.credentials.endpoint.starts_with("inproc://") {
            let space = AddressSpace::create(&spec, &config.initial_state)?;
            (Session::in_process(space.clone()), Some(space))
        } else {
            (connect(&spec.credentials)?, None)
        };
        info!(
            machine = %spec.machine_name,
            endpoint = %spec.credentials.endpoint,
            backend = %config.backend.label(),
            "gateway connected"
        );
        let factory = factory_for(config.backend.clone(), spec.clone());
        Ok(Self {
            toolbox: Arc::new(Toolbox::new(spec, session)),
            simulator,
            factory,
            sessions: Mutex::new(HashMap::new()),
            config,
        })
    }

    /// Replaces the configured backend for chat sessions and default bench runs.
    pub fn with_backend_factory(mut self, factory: BackendFactory) -> Self {
        self.factory = factory;
        self
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn spec(&self) -> &Arc<MachineSpec> {
        &self.config.spec
    }

    pub fn toolbox(&self) -> &Arc<Toolbox> {
        &self.toolbox
    }

    /// The in-process simulator, when the gateway owns one.
    pub fn simulator(&self) -> Option<&AddressSpace> {
        self.simulator.as_ref()
    }

    pub fn new_backend(&self) -> Result<Box<dyn LlmBackend>, BackendError> {
        (self.factory)()
    }

    pub fn new_conversation(&self) -> Result<Conversation<'static>, BackendError> {
        Ok(Conversation::new(self.config.agent, self.new_backend()?))
    }

    fn conversation(&self, session: &str) -> Result<SharedConversation, BackendError> {
        let mut sessions = self.sessions.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(existing) = sessions.get(session) {
            return Ok(existing.clone());
        }
        let created = Arc::new(tokio::sync::Mutex::new(self.new_conversation()?));
        sessions.insert(session.to_string(), created.clone());
        Ok(created)
    }

    /// Resolves a bench backend name: none for the configured backend,
    /// `oracle`, or `scripted:<name>` for a transcript in `scripted_dir`.
    fn bench_backend(&self, name: Option<&str>) -> Result<(Box<dyn LlmBackend>, String), ApiError> {
        match name {
            None | Some("configured") => {
                let backend = self.new_backend().map_err(ApiError::backend)?;
                Ok((backend, self.config.backend.label()))
            }
            Some("oracle") => Ok((Box::new(OracleBackend::new(self.spec().clone())), "oracle".into())),
            Some(other) => {
                let script = other
                    .strip_prefix("scripted:")
                    .ok_or_else(|| ApiError::bad_request(format!("unknown bench backend {other:?}")))?;
                let path = self.scripted_path(script)?;
                let backend = ScriptedBackend::from_file(&path).map_err(ApiError::backend)?;
                Ok((Box::new(backend), other.to_string()))
            }
        }
    }

    fn scripted_path(&self, name: &str) -> Result<PathBuf, ApiError> {
        let dir = self
            .config
            .scripted_dir
            .as_ref()
            .ok_or_else(|| ApiError::bad_request("no scripted_dir is configured"))?;
        let plain = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
        if !plain || name.starts_with('.') {
            return Err(ApiError::bad_request(format!("invalid transcript name {name:?}")));
        }
        let file = if name.ends_with(".json") { name.to_string() } else { format!("{name}.json") };
        let path = dir.join(file);
        if !path.is_file() {
            return Err(ApiError::bad_request(format!("no transcript named {name:?}")));
        }
        Ok(path)
    }

    fn transcript_names(&self) -> Vec<String> {
        let Some(dir) = &self.config.scripted_dir else { return Vec::new() };
        let mut names: Vec<String> = std::fs::read_dir(dir)
            .into_iter()
            .flatten()
            .flatten()
            .filter_map(|e| {
                let path = e.path();
                (path.extension()? == "json").then(|| path.file_stem()?.to_str().map(str::to_string))?
            })
            .collect();
        names.sort();
        names
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn backend(e: BackendError) -> Self {
        Self::new(StatusCode::BAD_GATEWAY, e.to_string())
    }

    fn machine(e: ClientError) -> Self {
        Self::new(StatusCode::BAD_GATEWAY, e.to_string())
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.message}))).into_response()
    }
}

/// JSON request body. Any failure to read or decode it is a 400.
struct JsonBody<T>(T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for JsonBody<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?;
        serde_json::from_slice(&bytes)
            .map(JsonBody)
            .map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChatRequest {
    message: String,
    #[serde(default)]
    session: Option<String>,
}

async fn chat(State(gw): State<Arc<Gateway>>, JsonBody(req): JsonBody<ChatRequest>) -> Result<Response, ApiError> {
    if req.message.trim().is_empty() {
        return Err(ApiError::bad_request("message is empty"));
    }
    let session = req.session.unwrap_or_else(|| DEFAULT_SESSION.to_string());
    let conversation = gw.conversation(&session).map_err(ApiError::backend)?;
    let mut guard: OwnedMutexGuard<Conversation<'static>> = conversation
        .try_lock_owned()
        .map_err(|_| ApiError::new(StatusCode::CONFLICT, format!("a chat turn is already running in session {session:?}")))?;
    let toolbox = gw.toolbox.clone();
    let message = req.message;
    let trace: TurnTrace = blocking(move || guard.send(&toolbox, &message)).await?;
    info!(
        session = %session,
        calls = trace.call_count(),
        rounds = trace.rounds_used,
        aborted = trace.aborted,
        "chat turn finished"
    );
    let mut body = json!({"session": session, "final_text": trace.final_text, "trace": trace});
    if let Some(AbortReason::Backend(detail)) = &trace.abort_reason {
        warn!(session = %session, "backend failed during chat turn");
        body["error"] = json!(detail);
        return Ok((StatusCode::BAD_GATEWAY, Json(body)).into_response());
    }
    Ok(Json(body).into_response())
}

async fn state(State(gw): State<Arc<Gateway>>) -> Result<Json<Value>, ApiError> {
    let toolbox = gw.toolbox.clone();
    let snapshot = blocking(move || toolbox.snapshot()).await?.map_err(ApiError::machine)?;
    Ok(Json(serde_json::to_value(snapshot).map_err(|e| ApiError::internal(e.to_string()))?))
}

async fn machine(State(gw): State<Arc<Gateway>>) -> Json<MachineSpec> {
    Json(gw.spec().redacted())
}

async fn list_tools(State(gw): State<Arc<Gateway>>) -> Json<Value> {
    let tools: Vec<Value> = gw.toolbox.descriptors().iter().map(|d| d.function_schema()).collect();
    Json(json!(tools))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToolCallRequest {
    tool: String,
    #[serde(default)]
    arguments: Value,
    #[serde(default)]
    call_id: Option<String>,
}

async fn call_tool(
    State(gw): State<Arc<Gateway>>,
    JsonBody(req): JsonBody<ToolCallRequest>,
) -> Result<Json<Value>, ApiError> {
    let call = ToolCall::new(req.call_id.unwrap_or_else(|| "http".into()), req.tool, req.arguments);
    let toolbox = gw.toolbox.clone();
    let result = blocking(move || toolbox.dispatch(&call)).await?;
    info!(tool = %result.parameter, ok = result.ok, "tool call over http");
    Ok(Json(serde_json::to_value(result).map_err(|e| ApiError::internal(e.to_string()))?))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchRequest {
    #[serde(default)]
    suite: Option<Value>,
    #[serde(default)]
    backend: Option<String>,
}

fn suite_from_request(gw: &Gateway, inline: Option<Value>) -> Result<BenchmarkSuite, ApiError> {
    let invalid = |e: plcagent::bench::SuiteError| ApiError::bad_request(format!("invalid suite: {e}"));
    match inline {
        Some(doc) => load_suite(&doc.to_string(), gw.spec()).map_err(invalid),
        None => {
            let path = gw
                .config
                .suite
                .as_deref()
                .ok_or_else(|| ApiError::bad_request("no suite given and none configured"))?;
            load_suite_file(path, gw.spec()).map_err(invalid)
        }
    }
}

async fn run_bench(State(gw): State<Arc<Gateway>>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let req: BenchRequest = if body.iter().all(u8::is_ascii_whitespace) {
        BenchRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))?
    };
    let suite = suite_from_request(&gw, req.suite)?;
    let (mut backend, label) = gw.bench_backend(req.backend.as_deref())?;
    let spec = gw.spec().clone();
    let agent = gw.config.agent;
    let report = blocking(move || run_suite_in_memory(&agent, backend.as_mut(), &label, spec, &suite))
        .await?
        .map_err(|e| match e {
            BenchError::Suite(_) | BenchError::EmptySuite => ApiError::bad_request(e.to_string()),
            other => ApiError::internal(other.to_string()),
        })?;
    info!(backend = %report.backend, correct = report.correct, total = report.total, "bench run finished");
    Ok(Json(serde_json::to_value(report).map_err(|e| ApiError::internal(e.to_string()))?))
}

async fn bench_backends(State(gw): State<Arc<Gateway>>) -> Json<Value> {
    let mut names = vec!["configured".to_string(), "oracle".to_string()];
    names.extend(gw.transcript_names().into_iter().map(|n| format!("scripted:{n}")));
    Json(json!({"configured": gw.config.backend.label(), "backends": names}))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no such endpoint")
}

pub fn router(gateway: Arc<Gateway>) -> Router {
    let api = Router::new()
        .route("/api/chat", post(chat))
        .route("/api/state", get(state))
        .route("/api/machine", get(machine))
        .route("/api/tools", get(list_tools))
        .route("/api/tools/call", post(call_tool))
        .route("/api/bench/run", post(run_bench))
        .route("/api/bench/backends", get(bench_backends));
    let api = match gateway.config.ui_assets.as_deref().map(Path::to_path_buf) {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(not_found),
    };
    api.layer(TraceLayer::new_for_http()).with_state(gateway)
}

/// A running HTTP server.
#[derive(Debug)]
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting connections and waits for in-flight requests.
    pub async fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        self.task.await.unwrap_or_else(|e| Err(std::io::Error::other(e)))
    }

    /// Runs until the server stops on its own.
    pub async fn wait(self) -> std::io::Result<()> {
        let ServerHandle { task, stop, .. } = self;
        let result = task.await.unwrap_or_else(|e| Err(std::io::Error::other(e)));
        drop(stop);
        result
    }
}

/// Serves `gateway` on `addr` (port 0 picks a free port).
pub async fn serve(gateway: Arc<Gateway>, addr: SocketAddr) -> Result<ServerHandle, GatewayError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| GatewayError::Bind { addr, source })?;
    let addr = listener.local_addr().map_err(|source| GatewayError::Bind { addr, source })?;
    let (stop, stopped) = oneshot::channel::<()>();
    let app = router(gateway);
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = stopped.await;
            })
            .await
    });
    info!(%addr, "gateway listening");
    Ok(ServerHandle {
        addr,
        stop: Some(stop),
        task,
    })
}

/// Starts the gateway described by `config` on its listen address.
pub async fn serve_http(config: GatewayConfig) -> Result<ServerHandle, GatewayError> {
    let listen = config.listen;
    let gateway = tokio::task::spawn_blocking(move || Gateway::start(config))
        .await
        .map_err(|e| GatewayError::Machine(ClientError::Transport(e.to_string())))??;
    serve(Arc::new(gateway), listen).await
}
