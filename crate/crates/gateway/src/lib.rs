//! Process-level composition of the PLC control gateway: configuration,
//! machine connection, backend selection and the HTTP/JSON API consumed by
//! the operator UI and by external tool clients.

pub mod backends;
pub mod config;
pub mod server;

pub use backends::{build_backend, BackendFactory};
pub use config::{load_config, load_config_with_env, BackendSettings, ConfigError, GatewayConfig};
pub use server::{router, serve, serve_http, Gateway, GatewayError, ServerHandle};

/// HTTP client crates dump raw request bytes, backend key included, at
/// their most verbose levels. These caps apply whatever `RUST_LOG` says.
const WIRE_LOG_CAPS: [&str; 2] = ["ureq=info", "ureq_proto=info"];

/// The filter the binaries log with: `spec` (RUST_LOG syntax) plus the
/// caps on wire-level logging.
pub fn log_filter(spec: &str) -> tracing_subscriber::EnvFilter {
    let mut filter = tracing_subscriber::EnvFilter::try_new(spec)
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    for cap in WIRE_LOG_CAPS {
        filter = filter.add_directive(cap.parse().expect("static directive"));
    }
    filter
}

/// Logs to stderr, filtered by `RUST_LOG` (default `info`).
pub fn init_tracing() {
    let spec = std::env::var("RUST_LOG").unwrap_or_else(|_| "info".into());
    let _ = tracing_subscriber::fmt()
        .with_env_filter(log_filter(&spec))
        .with_writer(std::io::stderr)
        .try_init();
}
