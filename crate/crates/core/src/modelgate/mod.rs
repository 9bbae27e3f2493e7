//! Chat-completion backends behind one interface.
//!
//! `openai_http` speaks the OpenAI-compatible chat-completions protocol
//! through a [`Transport`]; the mock kinds answer in-process and never touch
//! a transport. All HTTP traffic goes through a shared retry policy and an
//! in-flight limiter.

mod cache;
mod transport;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::corpus::{GoldLabel, McsbItem};
use crate::prompting::{Binding, Transcript, Turn};

pub use cache::{cache_key, complete_cached, CacheEntry, DiskCache};
pub use transport::{
    Body, HttpRequest, HttpResponse, HttpTransport, Method, Transport, TransportError,
};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("transport failed after {attempts} attempt(s): {last}")]
    Transport { attempts: u32, last: String },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("mock_gold needs the stereotype symbol of the bound item")]
    MissingHiddenGold,
    #[error("cache I/O: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    OpenaiHttp,
    MockFirst,
    MockGold,
    MockUniform,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::OpenaiHttp => "openai_http",
            Self::MockFirst => "mock_first",
            Self::MockGold => "mock_gold",
            Self::MockUniform => "mock_uniform",
        }
    }

    pub fn is_mock(self) -> bool {
        self != Self::OpenaiHttp
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "openai_http" => Ok(Self::OpenaiHttp),
            "mock_first" => Ok(Self::MockFirst),
            "mock_gold" => Ok(Self::MockGold),
            "mock_uniform" => Ok(Self::MockUniform),
            other => Err(format!("unknown backend kind {other:?}")),
        }
    }
}

fn default_max_in_flight() -> usize {
    4
}

/// Backend configuration. `auth_ref` names an environment variable; the
/// credential itself is never stored here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSpec {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint_url: Option<String>,
    #[serde(default)]
    pub model_name: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub auth_ref: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

impl BackendSpec {
    pub fn mock(kind: BackendKind) -> Self {
        Self {
            kind,
            endpoint_url: None,
            model_name: None,
            temperature: 0.0,
            max_in_flight: default_max_in_flight(),
            auth_ref: None,
            seed: 0,
        }
    }

    pub fn openai(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::OpenaiHttp,
            endpoint_url: Some(endpoint_url.into()),
            model_name: Some(model_name.into()),
            ..Self::mock(BackendKind::OpenaiHttp)
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.kind == BackendKind::OpenaiHttp {
            if self.endpoint_url.as_deref().is_none_or(str::is_empty) {
                return Err(GatewayError::Config(
                    "openai_http needs endpoint_url".into(),
                ));
            }
            if self.model_name.as_deref().is_none_or(str::is_empty) {
                return Err(GatewayError::Config("openai_http needs model_name".into()));
            }
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(GatewayError::Config(format!(
                "temperature must be a non-negative number, got {}",
                self.temperature
            )));
        }
        if self.max_in_flight == 0 {
            return Err(GatewayError::Config(
                "max_in_flight must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Short label stored on every evaluation record.
    pub fn backend_id(&self) -> String {
        match self.kind {
            BackendKind::OpenaiHttp => format!(
                "openai_http:{}@{}",
                self.model_name.as_deref().unwrap_or(""),
                self.endpoint_url.as_deref().unwrap_or("")
            ),
            BackendKind::MockUniform => format!("mock_uniform:{}", self.seed),
            kind => kind.as_str().to_string(),
        }
    }

    fn chat_url(&self) -> String {
        let base = self
            .endpoint_url
            .as_deref()
            .unwrap_or("")
            .trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub latency_ms: u64,
    pub from_cache: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

/// Symbols the mock_gold backend may consult: which letter each gold label
/// was bound to in one transcript. Real backends never see this.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GoldSymbols(pub BTreeMap<GoldLabel, char>);

impl GoldSymbols {
    pub fn from_binding(item: &McsbItem, binding: &Binding) -> Self {
        Self(
            GoldLabel::ALL
                .into_iter()
                .filter_map(|label| binding.symbol_for_label(item, label).map(|s| (label, s)))
                .collect(),
        )
    }

    pub fn get(&self, label: GoldLabel) -> Option<char> {
        self.0.get(&label).copied()
    }
}

/// Exponential backoff: `base_delay * 2^(attempt-1)`, capped at `max_delay`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    pub fn delay_after(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt.saturating_sub(1));
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

fn is_retryable(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

/// Counting semaphore bounding outstanding requests.
#[derive(Debug)]
pub struct InFlightLimiter {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a>(&'a InFlightLimiter);

impl InFlightLimiter {
    pub fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *active >= self.limit {
            active = self.freed.wait(active).unwrap_or_else(|e| e.into_inner());
        }
        *active += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut active = self.0.active.lock().unwrap_or_else(|e| e.into_inner());
        *active -= 1;
        self.0.freed.notify_one();
    }
}

/// Shared HTTP plumbing: credential lookup, retries, the in-flight bound.
pub(crate) struct HttpClient {
    transport: Arc<dyn Transport>,
    retry: RetryPolicy,
    limiter: InFlightLimiter,
    auth_ref: Option<String>,
    attempts: AtomicU64,
}

impl HttpClient {
    pub(crate) fn new(
        transport: Arc<dyn Transport>,
        retry: RetryPolicy,
        max_in_flight: usize,
        auth_ref: Option<String>,
    ) -> Self {
        Self {
            transport,
            retry,
            limiter: InFlightLimiter::new(max_in_flight),
            auth_ref,
            attempts: AtomicU64::new(0),
        }
    }

    pub(crate) fn credential(&self) -> Result<Option<String>, GatewayError> {
        match &self.auth_ref {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(value) if !value.is_empty() => Ok(Some(value)),
                _ => Err(GatewayError::Config(format!(
                    "credential environment variable {var} is not set"
                ))),
            },
        }
    }

    /// Sends with retries on transport failures, 429 and 5xx. Other non-2xx
    /// statuses are returned as [`GatewayError::Http`] with the body text.
    pub(crate) fn send(&self, mut request: HttpRequest) -> Result<HttpResponse, GatewayError> {
        request.bearer = self.credential()?;
        let max = self.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=max {
            self.attempts.fetch_add(1, Ordering::Relaxed);
            let result = {
                let _permit = self.limiter.acquire();
                self.transport.send(&request)
            };
            match result {
                Ok(response) if is_retryable(response.status) => {
                    last = format!("HTTP {}: {}", response.status, response.body_text());
                }
                Ok(response) if (200..300).contains(&response.status) => {
                    log::debug!("{} succeeded on attempt {attempt}", request.url);
                    return Ok(response);
                }
                Ok(response) => {
                    return Err(GatewayError::Http {
                        status: response.status,
                        body: response.body_text(),
                    })
                }
                Err(e) => last = e.0,
            }
            log::warn!("{} attempt {attempt}/{max} failed: {last}", request.url);
            if attempt < max {
                std::thread::sleep(self.retry.delay_after(attempt));
            }
        }
        Err(GatewayError::Transport {
            attempts: max,
            last,
        })
    }

    pub(crate) fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::Relaxed)
    }
}

/// A configured backend ready to answer transcripts.
pub struct Gateway {
    spec: BackendSpec,
    http: Option<HttpClient>,
}

impl Gateway {
    /// Builds a gateway with the real HTTP transport for `openai_http`.
    pub fn new(spec: BackendSpec) -> Result<Self, GatewayError> {
        let transport: Option<Arc<dyn Transport>> = if spec.kind == BackendKind::OpenaiHttp {
            let t = HttpTransport::new(Duration::from_secs(120))
                .map_err(|e| GatewayError::Config(e.0))?;
            Some(Arc::new(t))
        } else {
            None
        };
        Self::build(spec, transport, RetryPolicy::default())
    }

    /// Builds a gateway over a caller-supplied transport. Mock kinds keep the
    /// transport but never call it.
    pub fn with_transport(
        spec: BackendSpec,
        transport: Arc<dyn Transport>,
        retry: RetryPolicy,
    ) -> Result<Self, GatewayError> {
        Self::build(spec, Some(transport), retry)
    }

    fn build(
        spec: BackendSpec,
        transport: Option<Arc<dyn Transport>>,
        retry: RetryPolicy,
    ) -> Result<Self, GatewayError> {
        spec.validate()?;
        let http = match (spec.kind, transport) {
            (BackendKind::OpenaiHttp, Some(t)) => Some(HttpClient::new(
                t,
                retry,
                spec.max_in_flight,
                spec.auth_ref.clone(),
            )),
            (BackendKind::OpenaiHttp, None) => {
                return Err(GatewayError::Config("openai_http needs a transport".into()))
            }
            _ => None,
        };
        Ok(Self { spec, http })
    }

    pub fn spec(&self) -> &BackendSpec {
        &self.spec
    }

    /// Fails early when the credential variable is missing.
    pub fn preflight(&self) -> Result<(), GatewayError> {
        match &self.http {
            Some(http) => http.credential().map(|_| ()),
            None => Ok(()),
        }
    }

    /// Number of HTTP attempts made so far, retries included.
    pub fn http_attempts(&self) -> u64 {
        self.http.as_ref().map_or(0, HttpClient::attempts)
    }

    /// JSON body the HTTP kind would send for `messages`; also stored in
    /// cache entries for auditing.
    pub fn request_body(&self, messages: &[Turn]) -> Value {
        match self.spec.kind {
            BackendKind::OpenaiHttp => json!({
                "model": self.spec.model_name,
                "messages": messages,
                "temperature": self.spec.temperature,
            }),
            kind => json!({
                "backend": kind.as_str(),
                "messages": messages,
            }),
        }
    }

    pub fn complete(
        &self,
        transcript: &Transcript,
        hidden_gold: Option<&GoldSymbols>,
    ) -> Result<Completion, GatewayError> {
        let symbols = &transcript.binding.symbols;
        let mock_answer = |text: String| Completion {
            text,
            latency_ms: 0,
            from_cache: false,
            usage: None,
        };
        match self.spec.kind {
            BackendKind::OpenaiHttp => self.chat(transcript.messages()),
            BackendKind::MockFirst => Ok(mock_answer(
                symbols.first().map(char::to_string).unwrap_or_default(),
            )),
            BackendKind::MockGold => {
                let symbol = hidden_gold
                    .and_then(|g| g.get(GoldLabel::Stereotype))
                    .ok_or(GatewayError::MissingHiddenGold)?;
                Ok(mock_answer(symbol.to_string()))
            }
            BackendKind::MockUniform => {
                if symbols.is_empty() {
                    return Ok(mock_answer(String::new()));
                }
                let digest = cache::transcript_digest(transcript);
                let mut seed = [0u8; 32];
                seed[..8].copy_from_slice(&self.spec.seed.to_le_bytes());
                for (s, d) in seed[8..].iter_mut().zip(digest.iter()) {
                    *s = *d;
                }
                let mut rng = ChaCha8Rng::from_seed(seed);
                let pick = rng.random_range(0..symbols.len());
                Ok(mock_answer(symbols[pick].to_string()))
            }
        }
    }

    /// Free-form chat request. Mock backends answer with an empty string.
    pub fn chat(&self, messages: &[Turn]) -> Result<Completion, GatewayError> {
        let Some(http) = &self.http else {
            return Ok(Completion {
                text: String::new(),
                latency_ms: 0,
                from_cache: false,
                usage: None,
            });
        };
        let request = HttpRequest {
            method: Method::Post,
            url: self.spec.chat_url(),
            bearer: None,
            body: Body::Json(self.request_body(messages)),
        };
        let started = Instant::now();
        let response = http.send(request)?;
        let latency_ms = started.elapsed().as_millis() as u64;
        parse_chat_response(&response.body).map(|(text, usage)| Completion {
            text,
            latency_ms,
            from_cache: false,
            usage,
        })
    }
}

fn parse_chat_response(body: &[u8]) -> Result<(String, Option<Usage>), GatewayError> {
    let value: Value = serde_json::from_slice(body).map_err(|e| {
        GatewayError::Protocol(format!(
            "reply is not JSON ({e}): {}",
            String::from_utf8_lossy(&body[..body.len().min(200)])
        ))
    })?;
    let message = value
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .ok_or_else(|| GatewayError::Protocol("reply has no choices[0].message".into()))?;
    let text = match message.get("content") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) | None => String::new(),
        Some(other) => {
            return Err(GatewayError::Protocol(format!(
                "message content is not a string: {other}"
            )))
        }
    };
    let usage = value
        .get("usage")
        .and_then(|u| serde_json::from_value(u.clone()).ok());
    Ok((text, usage))
}
