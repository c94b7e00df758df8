use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use rand::Rng;

use super::{FixtureStore, GatewayError, LlmBackend, LlmRequest, LlmResponse, Provenance};

/// Serves recorded fixtures and nothing else.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    store: FixtureStore,
}

impl ReplayBackend {
    pub fn new(store: FixtureStore) -> Self {
        Self { store }
    }
}

impl LlmBackend for ReplayBackend {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        let key = req.key();
        self.store
            .get(&key, Provenance::Replay)
            .ok_or_else(|| GatewayError::BackendUnavailable(format!("no replay fixture for key {key}")))
    }
}

/// Read-through response cache. Hits short-circuit the inner backend;
/// misses are delegated and persisted.
#[derive(Debug, Clone)]
pub struct CachedBackend<B> {
    inner: B,
    store: FixtureStore,
}

impl<B: LlmBackend> CachedBackend<B> {
    pub fn new(inner: B, store: FixtureStore) -> Self {
        Self { inner, store }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: LlmBackend> LlmBackend for CachedBackend<B> {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        if let Some(hit) = self.store.get(&req.key(), Provenance::Cache) {
            return Ok(hit);
        }
        let resp = self.inner.complete(req)?;
        self.store.put(req, &resp)?;
        Ok(resp)
    }
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    /// Adds up to 50% random extra delay per attempt.
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
            jitter: true,
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
            jitter: false,
        }
    }

    /// Delay before retry number `attempt` (1-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt.saturating_sub(1));
        let mut d = self.base_delay.saturating_mul(factor).min(self.max_delay);
        if self.jitter && !d.is_zero() {
            let extra = rand::rng().random_range(0.0..0.5);
            d = d.mul_f64(1.0 + extra);
        }
        d
    }
}

/// Exponential backoff over transient failures only.
#[derive(Debug, Clone)]
pub struct RetryBackend<B> {
    inner: B,
    policy: RetryPolicy,
}

impl<B: LlmBackend> RetryBackend<B> {
    pub fn new(inner: B, policy: RetryPolicy) -> Self {
        Self { inner, policy }
    }
}

impl<B: LlmBackend> LlmBackend for RetryBackend<B> {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        let mut attempt = 1;
        loop {
            match self.inner.complete(req) {
                Err(e) if e.is_transient() && attempt < self.policy.max_attempts => {
                    let wait = self.policy.delay(attempt);
                    log::debug!("transient failure ({e}); retry {attempt} in {wait:?}");
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Counts calls passing through to the inner backend.
#[derive(Debug)]
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B: LlmBackend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<B: LlmBackend> LlmBackend for CountingBackend<B> {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(req)
    }
}

type Responder = dyn Fn(&LlmRequest, usize) -> Result<LlmResponse, GatewayError> + Send + Sync;

/// Programmable backend for tests. Counts calls and records the peak
/// number of concurrent calls.
pub struct MockBackend {
    responder: Box<Responder>,
    delay: Duration,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
}

impl MockBackend {
    /// `f` receives the request and the zero-based call index.
    pub fn new(f: impl Fn(&LlmRequest, usize) -> Result<LlmResponse, GatewayError> + Send + Sync + 'static) -> Self {
        Self {
            responder: Box::new(f),
            delay: Duration::ZERO,
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        }
    }

    /// Answers every prompt with the prompt itself.
    pub fn echo() -> Self {
        Self::new(|req, _| Ok(LlmResponse::complete(req.prompt.clone())))
    }

    /// Always answers `text`.
    pub fn constant(text: impl Into<String>) -> Self {
        let text = text.into();
        Self::new(move |_, _| Ok(LlmResponse::complete(text.clone())))
    }

    /// Replays `script` in call order, then fails with `BackendUnavailable`.
    pub fn scripted(script: Vec<Result<LlmResponse, GatewayError>>) -> Self {
        let script = Arc::new(script);
        Self::new(move |_, i| {
            script
                .get(i)
                .cloned()
                .unwrap_or_else(|| Err(GatewayError::BackendUnavailable("script exhausted".into())))
        })
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

impl LlmBackend for MockBackend {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        let index = self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        let out = (self.responder)(req, index);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        out
    }
}

impl std::fmt::Debug for MockBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockBackend")
            .field("calls", &self.calls())
            .finish_non_exhaustive()
    }
}
