//! Completion backends.
//!
//! A backend turns an assembled prompt into summary text. Two are provided:
//! [`RemoteBackend`], a JSON-over-HTTP client for a generic completion
//! endpoint, and [`ExtractiveStub`], a deterministic lead-sentence extractor
//! for offline runs and tests.

mod remote;
mod stub;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use remote::{BackendConfig, BackendKind, FieldMapping, RemoteBackend, API_KEY_ENV, ENDPOINT_ENV};
pub use stub::{prompt_input_section, ExtractiveStub};

use crate::tokenizer::TokenizerHandle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: usize,
    pub temperature: f64,
    pub sample_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_tokens < 1 {
            return Err(BackendError::InvalidRequest("max_tokens must be at least 1".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} is outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error("backend unavailable after {attempts} attempt(s): {last_error}")]
    Unavailable { attempts: u32, last_error: String },
    #[error("backend configuration error: {0}")]
    Configuration(String),
    #[error("unexpected backend response: {0}")]
    BadResponse(String),
}

pub trait Backend: Send + Sync {
    /// Name recorded as the producer of every summary.
    fn name(&self) -> &str;

    /// Completion text for `request`, at most `request.max_tokens` tokens long.
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

/// Builds the backend described by `config`.
pub fn build_backend(
    config: &BackendConfig,
    tokenizer: TokenizerHandle,
) -> Result<Arc<dyn Backend>, BackendError> {
    match config.kind {
        BackendKind::ExtractiveStub => Ok(Arc::new(ExtractiveStub::new(tokenizer))),
        BackendKind::Remote => Ok(Arc::new(RemoteBackend::new(config.clone(), tokenizer)?)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    BcSmall,
    BcLarge,
    Rl,
}

/// Sampling temperature per policy kind; overridable through configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemperatureDefaults {
    pub bc_small: f64,
    pub bc_large: f64,
    pub rl: f64,
}

impl Default for TemperatureDefaults {
    fn default() -> Self {
        // best leaf-task temperatures for the small and large supervised policies;
        // RL policies are sampled greedily
        Self {
            bc_small: 0.6,
            bc_large: 0.3,
            rl: 0.0,
        }
    }
}

impl TemperatureDefaults {
    pub fn for_policy(&self, kind: PolicyKind) -> f64 {
        match kind {
            PolicyKind::BcSmall => self.bc_small,
            PolicyKind::BcLarge => self.bc_large,
            PolicyKind::Rl => self.rl,
        }
    }
}

pub fn default_temperature(kind: PolicyKind) -> f64 {
    TemperatureDefaults::default().for_policy(kind)
}
