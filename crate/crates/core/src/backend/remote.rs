use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Backend, BackendError, CompletionRequest};
use crate::tokenizer::TokenizerHandle;

/// Overrides `BackendConfig::endpoint`.
pub const ENDPOINT_ENV: &str = "BOOKTREE_BACKEND_URL";
/// Default variable holding the auth token.
pub const API_KEY_ENV: &str = "BOOKTREE_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    #[default]
    ExtractiveStub,
}

/// Where request fields go and where the completion text is found.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMapping {
    pub prompt_field: String,
    pub max_tokens_field: String,
    pub temperature_field: String,
    /// Omitted from the body when empty.
    pub seed_field: String,
    pub stop_field: String,
    /// Dot-separated path into the response; numeric segments index arrays.
    pub text_path: String,
}

impl Default for FieldMapping {
    fn default() -> Self {
        Self {
            prompt_field: "prompt".into(),
            max_tokens_field: "max_tokens".into(),
            temperature_field: "temperature".into(),
            seed_field: "seed".into(),
            stop_field: "stop".into(),
            text_path: "choices.0.text".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: String,
    pub auth_header: String,
    /// Environment variable holding the token sent in `auth_header`.
    pub auth_env: String,
    pub timeout_secs: f64,
    pub retries: u32,
    pub backoff_secs: f64,
    pub max_in_flight: usize,
    pub fields: FieldMapping,
    /// Extra constant fields merged into every request body (model name, ...).
    pub extra_body: Map<String, Value>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::ExtractiveStub,
            endpoint: String::new(),
            auth_header: "Authorization".into(),
            auth_env: API_KEY_ENV.into(),
            timeout_secs: 60.0,
            retries: 3,
            backoff_secs: 1.0,
            max_in_flight: 4,
            fields: FieldMapping::default(),
            extra_body: Map::new(),
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.timeout_secs > 0.0) {
            return Err(BackendError::Configuration("timeout must be positive".into()));
        }
        if self.backoff_secs < 0.0 {
            return Err(BackendError::Configuration("backoff must not be negative".into()));
        }
        if self.max_in_flight == 0 {
            return Err(BackendError::Configuration("max_in_flight must be at least 1".into()));
        }
        if self.kind == BackendKind::Remote && self.resolved_endpoint().is_empty() {
            return Err(BackendError::Configuration(format!(
                "remote backend needs an endpoint (config or {ENDPOINT_ENV})"
            )));
        }
        Ok(())
    }

    pub fn resolved_endpoint(&self) -> String {
        std::env::var(ENDPOINT_ENV)
            .ok()
            .filter(|v| !v.is_empty())
            .unwrap_or_else(|| self.endpoint.clone())
    }
}

/// Counting semaphore bounding concurrent requests.
struct InFlight {
    used: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut used = self.used.lock();
        while *used >= self.limit {
            self.freed.wait(&mut used);
        }
        *used += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.used.lock() -= 1;
        self.0.freed.notify_one();
    }
}

/// JSON completion client with retries and exponential backoff.
///
/// 5xx responses, timeouts and connection failures are retried up to
/// `retries` times; 4xx responses fail immediately.
pub struct RemoteBackend {
    config: BackendConfig,
    endpoint: String,
    auth: Option<String>,
    client: reqwest::blocking::Client,
    tokenizer: TokenizerHandle,
    in_flight: InFlight,
    attempts: AtomicU64,
}

enum Attempt {
    Retryable(String),
    Fatal(BackendError),
}

impl RemoteBackend {
    pub fn new(config: BackendConfig, tokenizer: TokenizerHandle) -> Result<Self, BackendError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Configuration(e.to_string()))?;
        let auth = std::env::var(&config.auth_env)
            .ok()
            .filter(|v| !v.is_empty())
            .map(|token| {
                if config.auth_header.eq_ignore_ascii_case("authorization") {
                    format!("Bearer {token}")
                } else {
                    token
                }
            });
        Ok(Self {
            endpoint: config.resolved_endpoint(),
            in_flight: InFlight {
                used: Mutex::new(0),
                freed: Condvar::new(),
                limit: config.max_in_flight,
            },
            config,
            auth,
            client,
            tokenizer,
            attempts: AtomicU64::new(0),
        })
    }

    /// Total HTTP attempts made by this client.
    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::Relaxed)
    }

    fn body(&self, request: &CompletionRequest) -> Value {
        let f = &self.config.fields;
        let mut body = self.config.extra_body.clone();
        body.insert(f.prompt_field.clone(), Value::from(request.prompt.clone()));
        body.insert(f.max_tokens_field.clone(), Value::from(request.max_tokens));
        body.insert(f.temperature_field.clone(), Value::from(request.temperature));
        if !f.seed_field.is_empty() {
            body.insert(f.seed_field.clone(), Value::from(request.sample_seed));
        }
        if let Some(stop) = &request.stop {
            body.insert(f.stop_field.clone(), Value::from(stop.clone()));
        }
        Value::Object(body)
    }

    fn attempt(&self, body: &Value) -> Result<String, Attempt> {
        self.attempts.fetch_add(1, Ordering::Relaxed);
        let mut req = self.client.post(&self.endpoint).json(body);
        if let Some(auth) = &self.auth {
            req = req.header(self.config.auth_header.as_str(), auth.as_str());
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() || e.is_connect() || e.is_request() {
                Attempt::Retryable(e.to_string())
            } else {
                Attempt::Fatal(BackendError::Configuration(e.to_string()))
            }
        })?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(Attempt::Retryable(format!("server returned {status}")));
        }
        if status.is_client_error() {
            let detail = resp.text().unwrap_or_default();
            return Err(Attempt::Fatal(BackendError::Configuration(format!(
                "endpoint rejected the request with {status}: {detail}"
            ))));
        }
        let value: Value = resp
            .json()
            .map_err(|e| Attempt::Fatal(BackendError::BadResponse(e.to_string())))?;
        extract_text(&value, &self.config.fields.text_path)
            .map(str::to_owned)
            .ok_or_else(|| {
                Attempt::Fatal(BackendError::BadResponse(format!(
                    "no string at `{}` in response",
                    self.config.fields.text_path
                )))
            })
    }
}

/// Follows a dot-separated path through objects and arrays.
pub(crate) fn extract_text<'v>(value: &'v Value, path: &str) -> Option<&'v str> {
    let mut cur = value;
    for seg in path.split('.').filter(|s| !s.is_empty()) {
        cur = match cur {
            Value::Array(items) => items.get(seg.parse::<usize>().ok()?)?,
            Value::Object(map) => map.get(seg)?,
            _ => return None,
        };
    }
    cur.as_str()
}

impl Backend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        request.validate()?;
        let body = self.body(request);
        let _slot = self.in_flight.acquire();
        let mut last_error = String::new();
        let total = self.config.retries + 1;
        for attempt in 1..=total {
            match self.attempt(&body) {
                Ok(text) => {
                    tracing::debug!(attempt, "completion succeeded");
                    let text = self.tokenizer.truncate_end(text.trim(), request.max_tokens);
                    return Ok(text.to_owned());
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retryable(msg)) => {
                    tracing::warn!(attempt, total, error = %msg, "completion attempt failed");
                    last_error = msg;
                    if attempt < total {
                        let delay = self.config.backoff_secs * 2f64.powi(attempt as i32 - 1);
                        std::thread::sleep(Duration::from_secs_f64(delay));
                    }
                }
            }
        }
        Err(BackendError::Unavailable {
            attempts: total,
            last_error,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn text_path_extraction() {
        let v = json!({"choices": [{"text": "hi"}], "output": {"text": "yo"}});
        assert_eq!(extract_text(&v, "choices.0.text"), Some("hi"));
        assert_eq!(extract_text(&v, "output.text"), Some("yo"));
        assert_eq!(extract_text(&v, "choices.1.text"), None);
        assert_eq!(extract_text(&v, "output"), None);
    }

    #[test]
    fn config_validation() {
        let mut c = BackendConfig::default();
        assert!(c.validate().is_ok());
        c.timeout_secs = 0.0;
        assert!(c.validate().is_err());
        c.timeout_secs = 1.0;
        c.max_in_flight = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn request_body_uses_field_mapping() {
        let config = BackendConfig {
            kind: BackendKind::Remote,
            endpoint: "http://127.0.0.1:1/complete".into(),
            fields: FieldMapping {
                prompt_field: "input".into(),
                seed_field: String::new(),
                ..FieldMapping::default()
            },
            extra_body: Map::from_iter([("model".to_string(), json!("m1"))]),
            ..BackendConfig::default()
        };
        let backend = RemoteBackend::new(config, crate::tokenizer::default_tokenizer()).unwrap();
        let body = backend.body(&CompletionRequest {
            prompt: "p".into(),
            max_tokens: 5,
            temperature: 0.3,
            sample_seed: 1,
            stop: None,
        });
        assert_eq!(
            body,
            json!({"input": "p", "max_tokens": 5, "temperature": 0.3, "model": "m1"})
        );
    }
}
