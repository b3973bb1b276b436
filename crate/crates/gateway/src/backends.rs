//! Construction of language-model backends from configuration.

use std::sync::Arc;

use plcagent::agent::{BackendError, HttpBackend, LlmBackend, OracleBackend, ScriptedBackend};
use plcagent::MachineSpec;

use crate::config::BackendSettings;

/// Produces a fresh backend for each new conversation or bench run.
pub type BackendFactory = Arc<dyn Fn() -> Result<Box<dyn LlmBackend>, BackendError> + Send + Sync>;

pub fn build_backend(settings: &BackendSettings, spec: &Arc<MachineSpec>) -> Result<Box<dyn LlmBackend>, BackendError> {
    Ok(match settings {
        BackendSettings::Oracle => Box::new(OracleBackend::new(spec.clone())),
        BackendSettings::Scripted { script } => Box::new(ScriptedBackend::from_file(script)?),
        BackendSettings::Http(http) => Box::new(HttpBackend::new(http.clone())),
    })
}

pub fn factory_for(settings: BackendSettings, spec: Arc<MachineSpec>) -> BackendFactory {
    Arc::new(move || build_backend(&settings, &spec))
}
