//! Chat-completion and embedding clients.
//!
//! A [`Provider`] wraps a backend (HTTP or mock) with the retry policy, a
//! per-provider rate gate and an injected [`Clock`]. All waiting goes through
//! the clock, so retry and rate-limit behaviour can be driven by
//! [`ManualClock`] in tests without real sleeps.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("invalid retry policy: {0}")]
    InvalidPolicy(String),
    #[error("environment variable {0} is not set")]
    MissingApiKey(String),
    #[error("input text is empty")]
    EmptyInput,
    #[error("provider {provider} has no {kind} backend")]
    NoBackend { provider: String, kind: &'static str },
    #[error("no embedding for ids: {}", .0.join(", "))]
    MissingEmbeddings(Vec<String>),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("gave up after {attempts} attempts: deadline exceeded")]
    Timeout { attempts: u32 },
    #[error("http {code}: {body}")]
    Http { code: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

/// Exponential backoff parameters, all in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub initial_backoff: f64,
    pub max_backoff: f64,
    pub multiplier: f64,
    pub deadline: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            initial_backoff: 1.0,
            max_backoff: 10.0,
            multiplier: 2.0,
            deadline: 30.0,
        }
    }
}

impl RetryPolicy {
    pub fn validate(&self) -> Result<(), ProviderError> {
        let err = |m: &str| Err(ProviderError::InvalidPolicy(m.into()));
        let fields = [self.initial_backoff, self.multiplier, self.max_backoff, self.deadline];
        if fields.iter().any(|x| !x.is_finite()) {
            return err("backoff parameters must be finite");
        }
        if self.initial_backoff <= 0.0 {
            return err("initial_backoff must be > 0");
        }
        if self.multiplier < 1.0 {
            return err("multiplier must be >= 1");
        }
        if self.max_backoff < self.initial_backoff {
            return err("max_backoff must be >= initial_backoff");
        }
        if self.deadline <= 0.0 {
            return err("deadline must be > 0");
        }
        Ok(())
    }
}

/// Delay in seconds before retry number `attempt` (0-based):
/// `min(initial * multiplier^attempt, max)`.
pub fn next_backoff(policy: &RetryPolicy, attempt: u32) -> f64 {
    let raw = policy.initial_backoff * policy.multiplier.powi(attempt.min(i32::MAX as u32) as i32);
    if raw.is_finite() {
        raw.min(policy.max_backoff)
    } else {
        policy.max_backoff
    }
}

/// Harm-block threshold levels with their numeric API codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum SafetyThreshold {
    Unspecified = 0,
    BlockLowAndAbove = 1,
    BlockMediumAndAbove = 2,
    BlockOnlyHigh = 3,
    BlockNone = 4,
}

impl SafetyThreshold {
    pub const ALL: [SafetyThreshold; 5] = [
        SafetyThreshold::Unspecified,
        SafetyThreshold::BlockLowAndAbove,
        SafetyThreshold::BlockMediumAndAbove,
        SafetyThreshold::BlockOnlyHigh,
        SafetyThreshold::BlockNone,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SafetyThreshold::Unspecified => "HARM_BLOCK_THRESHOLD_UNSPECIFIED",
            SafetyThreshold::BlockLowAndAbove => "BLOCK_LOW_AND_ABOVE",
            SafetyThreshold::BlockMediumAndAbove => "BLOCK_MEDIUM_AND_ABOVE",
            SafetyThreshold::BlockOnlyHigh => "BLOCK_ONLY_HIGH",
            SafetyThreshold::BlockNone => "BLOCK_NONE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        if let Ok(code) = s.parse::<u8>() {
            return Self::from_code(code);
        }
        match s.to_ascii_uppercase().as_str() {
            "UNSPECIFIED" | "HARM_BLOCK_THRESHOLD_UNSPECIFIED" => Some(SafetyThreshold::Unspecified),
            "BLOCK_LOW_AND_ABOVE" => Some(SafetyThreshold::BlockLowAndAbove),
            "BLOCK_MEDIUM_AND_ABOVE" => Some(SafetyThreshold::BlockMediumAndAbove),
            "BLOCK_ONLY_HIGH" => Some(SafetyThreshold::BlockOnlyHigh),
            "BLOCK_NONE" => Some(SafetyThreshold::BlockNone),
            _ => None,
        }
    }
}

impl Serialize for SafetyThreshold {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for SafetyThreshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Code(u8),
            Name(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Code(c) => SafetyThreshold::from_code(c),
            Raw::Name(n) => SafetyThreshold::parse(&n),
        };
        parsed.ok_or_else(|| serde::de::Error::custom("unknown safety threshold"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HarmCategory {
    HateSpeech,
    Harassment,
    SexuallyExplicit,
    DangerousContent,
}

impl HarmCategory {
    pub const ALL: [HarmCategory; 4] = [
        HarmCategory::HateSpeech,
        HarmCategory::Harassment,
        HarmCategory::SexuallyExplicit,
        HarmCategory::DangerousContent,
    ];

    pub fn api_name(self) -> &'static str {
        match self {
            HarmCategory::HateSpeech => "HARM_CATEGORY_HATE_SPEECH",
            HarmCategory::Harassment => "HARM_CATEGORY_HARASSMENT",
            HarmCategory::SexuallyExplicit => "HARM_CATEGORY_SEXUALLY_EXPLICIT",
            HarmCategory::DangerousContent => "HARM_CATEGORY_DANGEROUS_CONTENT",
        }
    }
}

/// Requests per minute allowed through a provider's gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateLimit {
    PerMinute(u32),
    Unlimited,
}

impl Default for RateLimit {
    fn default() -> Self {
        RateLimit::PerMinute(30)
    }
}

impl Serialize for RateLimit {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            RateLimit::PerMinute(n) => s.serialize_u32(*n),
            RateLimit::Unlimited => s.serialize_str("unlimited"),
        }
    }
}

impl<'de> Deserialize<'de> for RateLimit {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u32),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(0) => Err(serde::de::Error::custom("max_requests_per_minute must be positive")),
            Raw::N(n) => Ok(RateLimit::PerMinute(n)),
            Raw::S(s) if s.eq_ignore_ascii_case("unlimited") => Ok(RateLimit::Unlimited),
            Raw::S(s) => Err(serde::de::Error::custom(format!("invalid rate limit {s:?}"))),
        }
    }
}

/// Everything needed to reach one model. Holds the *name* of the env var
/// carrying the API key, never the key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub name: String,
    #[serde(default)]
    pub base_url: String,
    #[serde(default)]
    pub api_key_env: String,
    #[serde(default)]
    pub model_id: String,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub safety: BTreeMap<HarmCategory, SafetyThreshold>,
    /// Whether the endpoint accepts safety settings; otherwise they are only logged.
    #[serde(default)]
    pub send_safety: bool,
    #[serde(default)]
    pub max_requests_per_minute: RateLimit,
    /// Extra top-level fields merged into every request body.
    #[serde(default)]
    pub extra: serde_json::Map<String, Value>,
    #[serde(default = "default_request_timeout")]
    pub request_timeout_secs: f64,
}

fn default_request_timeout() -> f64 {
    60.0
}

impl ProviderConfig {
    /// Config for an offline backend: no URL or key, unlimited rate.
    pub fn mock(name: impl Into<String>) -> Self {
        let name = name.into();
        ProviderConfig {
            model_id: name.clone(),
            name,
            base_url: String::new(),
            api_key_env: String::new(),
            retry: RetryPolicy::default(),
            safety: BTreeMap::new(),
            send_safety: false,
            max_requests_per_minute: RateLimit::Unlimited,
            extra: serde_json::Map::new(),
            request_timeout_secs: default_request_timeout(),
        }
    }

    /// All four harm categories set to `BLOCK_NONE`.
    pub fn with_safety_off(mut self) -> Self {
        for c in HarmCategory::ALL {
            self.safety.insert(c, SafetyThreshold::BlockNone);
        }
        self
    }

    /// The `safety_settings` array as sent to endpoints that accept it.
    pub fn safety_settings(&self) -> Value {
        Value::Array(
            self.safety
                .iter()
                .map(|(c, t)| json!({"category": c.api_name(), "threshold": t.as_str()}))
                .collect(),
        )
    }
}

/// Time source and sleeper used for retries and rate limiting.
pub trait Clock: Send + Sync {
    /// Time elapsed since an arbitrary fixed origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock { origin: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Virtual clock: `sleep` advances time instantly and is recorded.
#[derive(Debug, Default)]
pub struct ManualClock {
    state: Mutex<(Duration, Vec<Duration>)>,
}

impl ManualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, d: Duration) {
        self.state.lock().unwrap().0 += d;
    }

    /// Every sleep requested so far, in order.
    pub fn sleeps(&self) -> Vec<Duration> {
        self.state.lock().unwrap().1.clone()
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        self.state.lock().unwrap().0
    }

    fn sleep(&self, d: Duration) {
        let mut s = self.state.lock().unwrap();
        s.0 += d;
        s.1.push(d);
    }
}

thread_local! {
    static THREAD_NOW: std::cell::Cell<Duration> = const { std::cell::Cell::new(Duration::ZERO) };
}

/// Virtual clock with a separate timeline per thread. Sleeps return at once
/// and advance only the calling thread's time, so retry timing stays
/// deterministic when requests run on a worker pool.
#[derive(Debug, Default, Clone, Copy)]
pub struct ThreadClock;

impl Clock for ThreadClock {
    fn now(&self) -> Duration {
        THREAD_NOW.with(|t| t.get())
    }

    fn sleep(&self, d: Duration) {
        THREAD_NOW.with(|t| t.set(t.get() + d));
    }
}

/// Sliding-window gate: at most `limit` dispatches in any 60-second window.
#[derive(Debug)]
pub struct RateGate {
    limit: RateLimit,
    window: Duration,
    dispatched: Mutex<VecDeque<Duration>>,
}

impl RateGate {
    pub fn new(limit: RateLimit) -> Self {
        RateGate {
            limit,
            window: Duration::from_secs(60),
            dispatched: Mutex::new(VecDeque::new()),
        }
    }

    /// Blocks (through `clock`) until a dispatch slot is free, then takes it.
    pub fn acquire(&self, clock: &dyn Clock) {
        let RateLimit::PerMinute(limit) = self.limit else {
            return;
        };
        loop {
            let wait = {
                let mut log = self.dispatched.lock().unwrap();
                let now = clock.now();
                while log.front().is_some_and(|&t| now >= t + self.window) {
                    log.pop_front();
                }
                if log.len() < limit as usize {
                    log.push_back(now);
                    return;
                }
                *log.front().unwrap() + self.window - now
            };
            clock.sleep(wait);
        }
    }
}

/// Why a single attempt failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    /// Connection-level failure; retryable.
    Transport(String),
    Http { code: u16, body: String },
    /// The request itself timed out; retryable.
    Timeout,
    /// Malformed response; not retryable.
    Protocol(String),
}

impl TransportError {
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Transport(_) | TransportError::Timeout => true,
            TransportError::Http { code, .. } => *code == 429 || (500..600).contains(code),
            TransportError::Protocol(_) => false,
        }
    }
}

impl fmt::Display for TransportError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransportError::Transport(m) => write!(f, "transport: {m}"),
            TransportError::Http { code, body } => write!(f, "http {code}: {body}"),
            TransportError::Timeout => f.write_str("request timed out"),
            TransportError::Protocol(m) => write!(f, "protocol: {m}"),
        }
    }
}

/// One chat request as seen by a backend.
#[derive(Debug, Clone, Copy)]
pub struct ChatRequest<'a> {
    pub model: &'a str,
    /// Full user message: prompt, newline, input text.
    pub content: &'a str,
    pub input_text: &'a str,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, TransportError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbedItem {
    pub id: String,
    pub text: String,
}

impl EmbedItem {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        EmbedItem {
            id: id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EmbedError {
    Transport(TransportError),
    Missing(Vec<String>),
}

pub trait EmbedBackend: Send + Sync {
    fn embed(&self, model: &str, items: &[EmbedItem]) -> Result<Vec<Vec<f64>>, EmbedError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResponseStatus {
    Ok,
    TransportError { message: String },
    HttpError { code: u16, body: String },
    Timeout,
}

/// Result of one logical chat request, after retries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderResponse {
    pub text: String,
    pub status: ResponseStatus,
    pub attempts: u32,
    pub latency_ms: u64,
}

impl ProviderResponse {
    pub fn is_ok(&self) -> bool {
        self.status == ResponseStatus::Ok
    }
}

enum RetryOutcome<T> {
    Done(T),
    Failed(TransportError),
    TimedOut,
}

/// A configured endpoint: backend(s) plus retry, rate gate and clock.
pub struct Provider {
    config: ProviderConfig,
    chat: Option<Arc<dyn ChatBackend>>,
    embed: Option<Arc<dyn EmbedBackend>>,
    clock: Arc<dyn Clock>,
    gate: RateGate,
}

impl fmt::Debug for Provider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Provider").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Provider {
    pub fn new(config: ProviderConfig, clock: Arc<dyn Clock>) -> Result<Self, ProviderError> {
        config.retry.validate()?;
        let gate = RateGate::new(config.max_requests_per_minute);
        Ok(Provider {
            config,
            chat: None,
            embed: None,
            clock,
            gate,
        })
    }

    /// Provider talking to a remote OpenAI-compatible endpoint. The API key is
    /// read from the environment variable named in the config.
    pub fn http(config: ProviderConfig, clock: Arc<dyn Clock>) -> Result<Self, ProviderError> {
        let backend = Arc::new(HttpBackend::from_config(&config)?);
        Ok(Provider::new(config, clock)?.with_chat(backend.clone()).with_embed(backend))
    }

    pub fn with_chat(mut self, backend: Arc<dyn ChatBackend>) -> Self {
        self.chat = Some(backend);
        self
    }

    pub fn with_embed(mut self, backend: Arc<dyn EmbedBackend>) -> Self {
        self.embed = Some(backend);
        self
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    fn retrying<T>(&self, mut attempt_once: impl FnMut() -> Result<T, TransportError>) -> (RetryOutcome<T>, u32) {
        let policy = &self.config.retry;
        let deadline = Duration::from_secs_f64(policy.deadline);
        let start = self.clock.now();
        let mut attempts = 0u32;
        loop {
            self.gate.acquire(self.clock.as_ref());
            if attempts > 0 && self.clock.now() - start > deadline {
                return (RetryOutcome::TimedOut, attempts);
            }
            attempts += 1;
            match attempt_once() {
                Ok(v) => return (RetryOutcome::Done(v), attempts),
                Err(e) if !e.is_retryable() => return (RetryOutcome::Failed(e), attempts),
                Err(e) => {
                    log::debug!("{}: attempt {attempts} failed: {e}", self.config.name);
                    let backoff = Duration::from_secs_f64(next_backoff(policy, attempts - 1));
                    let elapsed = self.clock.now() - start;
                    if elapsed + backoff > deadline {
                        return (RetryOutcome::TimedOut, attempts);
                    }
                    self.clock.sleep(backoff);
                }
            }
        }
    }

    /// Sends `prompt + "\n" + input_text` as one user message.
    ///
    /// Retryable failures (transport errors, HTTP 429/5xx, request timeouts)
    /// are retried with exponential backoff until the next wait would push the
    /// cumulative time past the policy deadline.
    pub fn send_chat(&self, prompt: &str, input_text: &str) -> Result<ProviderResponse, ProviderError> {
        if input_text.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let backend = self.chat.as_ref().ok_or_else(|| ProviderError::NoBackend {
            provider: self.config.name.clone(),
            kind: "chat",
        })?;
        let content = format!("{prompt}\n{input_text}");
        let request = ChatRequest {
            model: &self.config.model_id,
            content: &content,
            input_text,
        };
        let started = self.clock.now();
        let (outcome, attempts) = self.retrying(|| backend.complete(&request));
        let latency_ms = (self.clock.now() - started).as_millis() as u64;
        let (text, status) = match outcome {
            RetryOutcome::Done(text) => (text, ResponseStatus::Ok),
            RetryOutcome::Failed(TransportError::Http { code, body }) => (String::new(), ResponseStatus::HttpError { code, body }),
            RetryOutcome::Failed(e) => (String::new(), ResponseStatus::TransportError { message: e.to_string() }),
            RetryOutcome::TimedOut => (String::new(), ResponseStatus::Timeout),
        };
        Ok(ProviderResponse {
            text,
            status,
            attempts,
            latency_ms,
        })
    }

    /// One vector per item, all of the same dimension.
    pub fn send_embed(&self, items: &[EmbedItem]) -> Result<Vec<Vec<f64>>, ProviderError> {
        if items.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let backend = self.embed.as_ref().ok_or_else(|| ProviderError::NoBackend {
            provider: self.config.name.clone(),
            kind: "embedding",
        })?;
        let mut missing = None;
        let (outcome, attempts) = self.retrying(|| match backend.embed(&self.config.model_id, items) {
            Ok(v) => Ok(Some(v)),
            Err(EmbedError::Missing(ids)) => {
                missing = Some(ids);
                Ok(None)
            }
            Err(EmbedError::Transport(e)) => Err(e),
        });
        let vectors = match outcome {
            RetryOutcome::Done(Some(v)) => v,
            RetryOutcome::Done(None) => return Err(ProviderError::MissingEmbeddings(missing.unwrap_or_default())),
            RetryOutcome::Failed(TransportError::Http { code, body }) => return Err(ProviderError::Http { code, body }),
            RetryOutcome::Failed(e) => return Err(ProviderError::Transport(e.to_string())),
            RetryOutcome::TimedOut => return Err(ProviderError::Timeout { attempts }),
        };
        if vectors.len() != items.len() {
            return Err(ProviderError::Protocol(format!(
                "expected {} vectors, got {}",
                items.len(),
                vectors.len()
            )));
        }
        let dim = vectors[0].len();
        if dim == 0 || vectors.iter().any(|v| v.len() != dim) {
            return Err(ProviderError::Protocol("embedding dimension mismatch within batch".into()));
        }
        Ok(vectors)
    }
}

/// OpenAI-compatible HTTP backend (`/chat/completions`, `/embeddings`).
pub struct HttpBackend {
    agent: ureq::Agent,
    base_url: String,
    api_key: Option<String>,
    extra: serde_json::Map<String, Value>,
    safety: Option<Value>,
}

impl HttpBackend {
    pub fn from_config(config: &ProviderConfig) -> Result<Self, ProviderError> {
        let api_key = if config.api_key_env.is_empty() {
            None
        } else {
            Some(std::env::var(&config.api_key_env).map_err(|_| ProviderError::MissingApiKey(config.api_key_env.clone()))?)
        };
        if !config.safety.is_empty() && !config.send_safety {
            log::info!(
                "{}: safety settings recorded but not sent (endpoint does not accept them)",
                config.name
            );
        }
        Ok(Self::new(
            &config.base_url,
            api_key,
            config.extra.clone(),
            config.send_safety.then(|| config.safety_settings()),
            Duration::from_secs_f64(config.request_timeout_secs),
        ))
    }

    pub fn new(
        base_url: &str,
        api_key: Option<String>,
        extra: serde_json::Map<String, Value>,
        safety: Option<Value>,
        timeout: Duration,
    ) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpBackend {
            agent,
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            extra,
            safety,
        }
    }

    fn post(&self, path: &str, mut body: serde_json::Map<String, Value>) -> Result<Value, TransportError> {
        for (k, v) in &self.extra {
            body.insert(k.clone(), v.clone());
        }
        let url = format!("{}{}", self.base_url, path);
        let mut request = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = request.send_json(Value::Object(body)).map_err(map_ureq_error)?;
        let code = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(map_ureq_error)?;
        if !(200..300).contains(&code) {
            return Err(TransportError::Http { code, body: text });
        }
        serde_json::from_str(&text).map_err(|e| TransportError::Protocol(format!("invalid json response: {e}")))
    }
}

fn map_ureq_error(e: ureq::Error) -> TransportError {
    match e {
        ureq::Error::Timeout(_) => TransportError::Timeout,
        ureq::Error::StatusCode(code) => TransportError::Http {
            code,
            body: String::new(),
        },
        other => TransportError::Transport(other.to_string()),
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, TransportError> {
        let mut body = serde_json::Map::new();
        body.insert("model".into(), json!(request.model));
        body.insert("messages".into(), json!([{"role": "user", "content": request.content}]));
        if let Some(safety) = &self.safety {
            body.insert("safety_settings".into(), safety.clone());
        }
        let response = self.post("/chat/completions", body)?;
        response
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| TransportError::Protocol("missing choices[0].message.content".into()))
    }
}

impl EmbedBackend for HttpBackend {
    fn embed(&self, model: &str, items: &[EmbedItem]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut body = serde_json::Map::new();
        body.insert("model".into(), json!(model));
        body.insert("input".into(), json!(items.iter().map(|i| i.text.as_str()).collect::<Vec<_>>()));
        let response = self.post("/embeddings", body).map_err(EmbedError::Transport)?;
        let protocol = |m: &str| EmbedError::Transport(TransportError::Protocol(m.into()));
        let data = response.get("data").and_then(Value::as_array).ok_or_else(|| protocol("missing data array"))?;
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(data.len());
        for (pos, entry) in data.iter().enumerate() {
            let index = entry.get("index").and_then(Value::as_u64).map(|i| i as usize).unwrap_or(pos);
            let vector = entry
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| protocol("missing embedding"))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| protocol("non-numeric embedding component")))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push((index, vector));
        }
        rows.sort_by_key(|(i, _)| *i);
        Ok(rows.into_iter().map(|(_, v)| v).collect())
    }
}

/// Returns the input text unchanged.
#[derive(Debug, Default)]
pub struct EchoBackend;

impl ChatBackend for EchoBackend {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, TransportError> {
        Ok(request.input_text.to_string())
    }
}

/// Fixed responses keyed by input text; unknown inputs get `fallback` or an echo.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    responses: HashMap<String, Result<String, TransportError>>,
    fallback: Option<Result<String, TransportError>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn respond(mut self, input_text: impl Into<String>, response: impl Into<String>) -> Self {
        self.responses.insert(input_text.into(), Ok(response.into()));
        self
    }

    pub fn fail(mut self, input_text: impl Into<String>, error: TransportError) -> Self {
        self.responses.insert(input_text.into(), Err(error));
        self
    }

    pub fn insert(&mut self, input_text: impl Into<String>, response: Result<String, TransportError>) {
        self.responses.insert(input_text.into(), response);
    }

    pub fn with_fallback(mut self, fallback: Result<String, TransportError>) -> Self {
        self.fallback = Some(fallback);
        self
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, TransportError> {
        match self.responses.get(request.input_text).or(self.fallback.as_ref()) {
            Some(r) => r.clone(),
            None => Ok(request.input_text.to_string()),
        }
    }
}

/// Plays back a queue of results, one per call; once empty, repeats `then`.
#[derive(Debug)]
pub struct SequenceBackend {
    queue: Mutex<VecDeque<Result<String, TransportError>>>,
    then: Result<String, TransportError>,
}

impl SequenceBackend {
    pub fn new(script: Vec<Result<String, TransportError>>, then: Result<String, TransportError>) -> Self {
        SequenceBackend {
            queue: Mutex::new(script.into()),
            then,
        }
    }

    pub fn always(result: Result<String, TransportError>) -> Self {
        Self::new(Vec::new(), result)
    }
}

impl ChatBackend for SequenceBackend {
    fn complete(&self, _request: &ChatRequest<'_>) -> Result<String, TransportError> {
        self.queue.lock().unwrap().pop_front().unwrap_or_else(|| self.then.clone())
    }
}

/// Wraps a backend and counts calls.
pub struct Counting<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B> Counting<B> {
    pub fn new(inner: B) -> Self {
        Counting {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<B: ChatBackend> ChatBackend for Counting<B> {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}

impl<B: EmbedBackend> EmbedBackend for Counting<B> {
    fn embed(&self, model: &str, items: &[EmbedItem]) -> Result<Vec<Vec<f64>>, EmbedError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.embed(model, items)
    }
}

fn fnv1a(bytes: &[u8], salt: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // final avalanche so nearby salts give unrelated components
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

/// Deterministic offline embedder: each lowercase whitespace token is hashed
/// to a pseudo-random direction, the directions are summed and normalised.
/// Texts sharing words get correlated vectors.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let lowered = text.to_lowercase();
        let mut tokens: Vec<&str> = lowered.split_whitespace().collect();
        if tokens.is_empty() {
            tokens.push("");
        }
        let mut v = vec![0.0; self.dim];
        for token in tokens {
            for (k, slot) in v.iter_mut().enumerate() {
                let h = fnv1a(token.as_bytes(), k as u64);
                *slot += (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl EmbedBackend for HashEmbedder {
    fn embed(&self, _model: &str, items: &[EmbedItem]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Ok(items.iter().map(|i| self.vector(&i.text)).collect())
    }
}

/// Vectors read from a JSONL file of `{"id": ..., "vector": [...]}`, looked up by id.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedEmbeddings {
    vectors: HashMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
struct PrecomputedRow {
    id: String,
    vector: Vec<f64>,
}

impl PrecomputedEmbeddings {
    pub fn from_reader(reader: impl BufRead) -> Result<Self, ProviderError> {
        let mut vectors = HashMap::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| ProviderError::Io {
                path: "<reader>".into(),
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let row: PrecomputedRow = serde_json::from_str(&line)
                .map_err(|e| ProviderError::Protocol(format!("precomputed embeddings line {}: {e}", n + 1)))?;
            vectors.insert(row.id, row.vector);
        }
        Ok(PrecomputedEmbeddings { vectors })
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let file = std::fs::File::open(path).map_err(|e| ProviderError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

impl EmbedBackend for PrecomputedEmbeddings {
    fn embed(&self, _model: &str, items: &[EmbedItem]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let missing: Vec<String> = items
            .iter()
            .filter(|i| !self.vectors.contains_key(&i.id))
            .map(|i| i.id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(EmbedError::Missing(missing));
        }
        Ok(items.iter().map(|i| self.vectors[&i.id].clone()).collect())
    }
}
