use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{ChatRequest, ProviderConfig, Role, Sampling};

const BODY_SNIPPET: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureKind {
    /// Connection problems, rate limiting, 5xx. Retried.
    Transient,
    /// Bad or missing credentials. Never retried.
    Auth,
    /// Anything else the provider rejects. Not retried.
    Fatal,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{kind:?} transport failure (status {status:?}): {body}")]
pub struct TransportError {
    pub kind: FailureKind,
    pub status: Option<u16>,
    pub body: String,
}

impl TransportError {
    pub fn new(kind: FailureKind, status: Option<u16>, body: impl Into<String>) -> Self {
        TransportError {
            kind,
            status,
            body: truncate(&body.into(), BODY_SNIPPET),
        }
    }
}

fn truncate(s: &str, max: usize) -> String {
    if s.len() <= max {
        return s.to_string();
    }
    let mut cut = max;
    while !s.is_char_boundary(cut) {
        cut -= 1;
    }
    format!("{}...", &s[..cut])
}

/// A single attempt at a chat completion.
pub trait ChatTransport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderErrorKind {
    Auth,
    RetriesExhausted,
    Rejected,
    InvalidRequest,
    MissingApiKey,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub struct ProviderError {
    pub kind: ProviderErrorKind,
    pub status: Option<u16>,
    pub body: String,
    pub attempts: u32,
}

impl std::fmt::Display for ProviderError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let what = match self.kind {
            ProviderErrorKind::MissingApiKey => return write!(f, "missing API key: {}", self.body),
            ProviderErrorKind::InvalidRequest => {
                return write!(f, "invalid request: {}", self.body)
            }
            ProviderErrorKind::Auth => "provider rejected the credentials",
            ProviderErrorKind::RetriesExhausted => "provider kept failing",
            ProviderErrorKind::Rejected => "provider rejected the request",
        };
        write!(f, "{what}")?;
        if let Some(s) = self.status {
            write!(f, " (HTTP {s})")?;
        }
        write!(f, " after {} attempt(s): {}", self.attempts, self.body)
    }
}

impl ProviderError {
    pub fn missing_key(var: &str) -> Self {
        ProviderError {
            kind: ProviderErrorKind::MissingApiKey,
            status: None,
            body: format!("environment variable {var} is not set"),
            attempts: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl RetryPolicy {
    pub fn from_config(cfg: &ProviderConfig) -> Self {
        RetryPolicy {
            max_retries: cfg.max_retries,
            base_delay: Duration::from_millis(cfg.backoff_base_ms),
            max_delay: Duration::from_millis(cfg.backoff_max_ms),
        }
    }

    pub fn immediate(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    /// Delay before retry number `retry` (0-based): base * 2^retry, capped.
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.min(20)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Retrying front door to a transport.
#[derive(Clone)]
pub struct Gateway {
    transport: Arc<dyn ChatTransport>,
    policy: RetryPolicy,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("policy", &self.policy)
            .finish()
    }
}

impl Gateway {
    pub fn new(transport: Arc<dyn ChatTransport>, policy: RetryPolicy) -> Self {
        Gateway { transport, policy }
    }

    /// Sends the request, retrying transient failures with exponential
    /// backoff. At most `1 + max_retries` transport attempts are made.
    pub fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let systems = request
            .messages
            .iter()
            .filter(|m| m.role == Role::System)
            .count();
        let starts_with_system = request
            .messages
            .first()
            .is_some_and(|m| m.role == Role::System);
        if systems != 1 || !starts_with_system {
            return Err(ProviderError {
                kind: ProviderErrorKind::InvalidRequest,
                status: None,
                body: "messages must start with exactly one system message".into(),
                attempts: 0,
            });
        }
        if let Some(idx) = request.messages.iter().position(|m| m.content.is_empty()) {
            return Err(ProviderError {
                kind: ProviderErrorKind::InvalidRequest,
                status: None,
                body: format!("message {idx} has empty content"),
                attempts: 0,
            });
        }

        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.transport.send(request) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    let kind = match e.kind {
                        FailureKind::Auth => Some(ProviderErrorKind::Auth),
                        FailureKind::Fatal => Some(ProviderErrorKind::Rejected),
                        FailureKind::Transient if attempts > self.policy.max_retries => {
                            Some(ProviderErrorKind::RetriesExhausted)
                        }
                        FailureKind::Transient => None,
                    };
                    if let Some(kind) = kind {
                        return Err(ProviderError {
                            kind,
                            status: e.status,
                            body: e.body,
                            attempts,
                        });
                    }
                    tracing::debug!(attempt = attempts, status = ?e.status, "transient provider failure, backing off");
                    thread::sleep(self.policy.delay(attempts - 1));
                }
            }
        }
    }
}

/// Token bucket shared by every worker talking to one provider.
#[derive(Debug)]
pub struct RateLimiter {
    capacity: f64,
    per_second: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn per_minute(requests: u32) -> Self {
        let capacity = f64::from(requests.max(1));
        RateLimiter {
            capacity,
            per_second: capacity / 60.0,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Blocks until a token is available.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut guard = self.state.lock().unwrap_or_else(|p| p.into_inner());
                let (tokens, last) = &mut *guard;
                let now = Instant::now();
                *tokens = (*tokens + now.duration_since(*last).as_secs_f64() * self.per_second)
                    .min(self.capacity);
                *last = now;
                if *tokens >= 1.0 {
                    *tokens -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - *tokens) / self.per_second)
            };
            thread::sleep(wait);
        }
    }
}

/// OpenAI-compatible `chat/completions` endpoint.
pub struct HttpTransport {
    agent: ureq::Agent,
    cfg: ProviderConfig,
    api_key: String,
    limiter: Option<Arc<RateLimiter>>,
}

impl HttpTransport {
    /// Reads the API key from the configured environment variable.
    pub fn from_env(cfg: ProviderConfig) -> Result<Self, ProviderError> {
        let key = std::env::var(&cfg.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| ProviderError::missing_key(&cfg.api_key_env))?;
        Ok(Self::with_key(cfg, key))
    }

    pub fn with_key(cfg: ProviderConfig, api_key: String) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.request_timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        let limiter = cfg
            .requests_per_minute
            .map(|rpm| Arc::new(RateLimiter::per_minute(rpm)));
        HttpTransport {
            agent,
            cfg,
            api_key,
            limiter,
        }
    }

    pub fn request_body(cfg: &ProviderConfig, request: &ChatRequest) -> Value {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| json!({"role": m.role, "content": m.content}))
            .collect();
        let mut body = json!({"model": cfg.model_id, "messages": messages});
        if let Sampling::Explicit { temperature, top_p } = cfg.sampling {
            body["temperature"] = json!(temperature);
            body["top_p"] = json!(top_p);
        }
        body
    }
}

fn classify_status(status: u16) -> FailureKind {
    match status {
        401 | 403 => FailureKind::Auth,
        408 | 409 | 425 | 429 => FailureKind::Transient,
        s if s >= 500 => FailureKind::Transient,
        _ => FailureKind::Fatal,
    }
}

impl ChatTransport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        if let Some(l) = &self.limiter {
            l.acquire();
        }
        let body = Self::request_body(&self.cfg, request);
        let mut resp = self
            .agent
            .post(&self.cfg.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| TransportError::new(FailureKind::Transient, None, e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| {
            TransportError::new(FailureKind::Transient, Some(status), e.to_string())
        })?;
        if !(200..300).contains(&status) {
            return Err(TransportError::new(
                classify_status(status),
                Some(status),
                text,
            ));
        }
        let parsed: Value = serde_json::from_str(&text).map_err(|e| {
            TransportError::new(FailureKind::Fatal, Some(status), format!("{e}: {text}"))
        })?;
        parsed["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| TransportError::new(FailureKind::Fatal, Some(status), text))
    }
}
