//! Provider-agnostic completion interface.
//!
//! Every model call in the pipeline goes through an [`LlmBackend`]. Backends
//! compose: a live HTTP backend is usually wrapped in [`RetryBackend`], then
//! [`CachedBackend`], then a [`Gateway`] that caps in-flight requests. Tests
//! and reproducible runs use [`ReplayBackend`] over a fixture directory,
//! which never fabricates a response.

mod backends;
mod http;
mod store;

use std::fmt;
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};

pub use backends::{CachedBackend, CountingBackend, MockBackend, ReplayBackend, RetryBackend, RetryPolicy};
pub use http::{HttpBackend, API_KEY_ENV};
pub use store::{record_fixture, FixtureStore};

pub const DEFAULT_MAX_OUTPUT: u32 = 8192;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub prompt: String,
    pub model_tag: String,
    /// In `[0, 1]`; zero unless a caller deliberately re-samples.
    #[serde(default)]
    pub temperature: f64,
    pub max_output: u32,
}

impl LlmRequest {
    pub fn new(prompt: impl Into<String>, model_tag: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            model_tag: model_tag.into(),
            temperature: 0.0,
            max_output: DEFAULT_MAX_OUTPUT,
        }
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn with_max_output(mut self, n: u32) -> Self {
        self.max_output = n;
        self
    }

    pub fn key(&self) -> CacheKey {
        CacheKey::of(self)
    }

    fn check(&self) -> Result<(), GatewayError> {
        if self.prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("empty prompt".into()));
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 1]",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishState {
    Complete,
    Truncated,
    Refused,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Live,
    Cache,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub finish_state: FinishState,
    pub provenance: Provenance,
}

impl LlmResponse {
    /// An empty text can never be a complete answer; it is downgraded to
    /// `Truncated`.
    pub fn new(text: impl Into<String>, finish_state: FinishState, provenance: Provenance) -> Self {
        let text = text.into();
        let finish_state = if text.is_empty() && finish_state == FinishState::Complete {
            FinishState::Truncated
        } else {
            finish_state
        };
        Self {
            text,
            finish_state,
            provenance,
        }
    }

    pub fn complete(text: impl Into<String>) -> Self {
        Self::new(text, FinishState::Complete, Provenance::Live)
    }
}

/// SHA-256 over the length-prefixed request fields. Temperature is encoded
/// with fixed precision so the key is stable across platforms.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn of(req: &LlmRequest) -> Self {
        let temperature = format!("{:.6}", req.temperature);
        let max_output = req.max_output.to_string();
        CacheKey(crate::text::sha256_hex(&[
            "irac-llm-v1",
            &req.prompt,
            &req.model_tag,
            &temperature,
            &max_output,
        ]))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("rate limited")]
    RateLimited,
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("model refused the request")]
    Refused,
    #[error("cache i/o error: {0}")]
    CacheIo(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl GatewayError {
    /// Rate limits and server-side failures are worth retrying.
    pub fn is_transient(&self) -> bool {
        matches!(self, GatewayError::RateLimited | GatewayError::Transient(_))
    }
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, GatewayError>;
}

impl<T: LlmBackend + ?Sized> LlmBackend for Arc<T> {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        (**self).complete(req)
    }
}

impl<T: LlmBackend + ?Sized> LlmBackend for Box<T> {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        (**self).complete(req)
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Shareable front door: validates requests, stamps the model tag, and caps
/// the number of in-flight backend calls.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn LlmBackend>,
    model_tag: String,
    max_output: u32,
    limit: Arc<Semaphore>,
}

impl Gateway {
    pub fn new(backend: impl LlmBackend + 'static, model_tag: impl Into<String>) -> Self {
        Self {
            backend: Arc::new(backend),
            model_tag: model_tag.into(),
            max_output: DEFAULT_MAX_OUTPUT,
            limit: Arc::new(Semaphore {
                free: Mutex::new(usize::MAX),
                cv: Condvar::new(),
            }),
        }
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.limit = Arc::new(Semaphore {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        });
        self
    }

    pub fn with_max_output(mut self, n: u32) -> Self {
        self.max_output = n;
        self
    }

    pub fn model_tag(&self) -> &str {
        &self.model_tag
    }

    /// The request this gateway sends for `prompt` at `temperature`.
    pub fn request(&self, prompt: impl Into<String>, temperature: f64) -> LlmRequest {
        LlmRequest::new(prompt, self.model_tag.clone())
            .with_temperature(temperature)
            .with_max_output(self.max_output)
    }

    pub fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        req.check()?;
        let _permit = self.limit.acquire();
        self.backend.complete(req)
    }
}

impl LlmBackend for Gateway {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        Gateway::complete(self, req)
    }
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("model_tag", &self.model_tag)
            .field("max_output", &self.max_output)
            .finish_non_exhaustive()
    }
}

/// Declarative gateway setup, as found in pipeline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum BackendConfig {
    /// Serve recorded fixtures only.
    Replay { fixtures: PathBuf },
    /// OpenAI-compatible chat completion endpoint.
    Live {
        endpoint: String,
        #[serde(default)]
        cache: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    #[serde(flatten)]
    pub backend: BackendConfig,
    pub model_tag: String,
    #[serde(default = "default_max_output")]
    pub max_output: u32,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_max_output() -> u32 {
    DEFAULT_MAX_OUTPUT
}

fn default_in_flight() -> usize {
    4
}

impl GatewayConfig {
    pub fn build(&self) -> Result<Gateway, GatewayError> {
        let gateway = match &self.backend {
            BackendConfig::Replay { fixtures } => {
                Gateway::new(ReplayBackend::new(FixtureStore::new(fixtures)), &self.model_tag)
            }
            BackendConfig::Live { endpoint, cache } => {
                let live = RetryBackend::new(HttpBackend::from_env(endpoint)?, RetryPolicy::default());
                match cache {
                    Some(dir) => Gateway::new(CachedBackend::new(live, FixtureStore::new(dir)), &self.model_tag),
                    None => Gateway::new(live, &self.model_tag),
                }
            }
        };
        Ok(gateway
            .with_max_output(self.max_output)
            .with_max_in_flight(self.max_in_flight))
    }
}
