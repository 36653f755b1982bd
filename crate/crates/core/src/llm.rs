//! Chat-completions client: a blocking single-attempt transport trait, a
//! retrying wrapper with a concurrency bound, an HTTP transport and a
//! scriptable mock.

use std::collections::VecDeque;
use std::fs::File;
use std::io::Write;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const API_KEY_ENV: &str = "CODEIE_API_KEY";
pub const BASE_URL_ENV: &str = "CODEIE_BASE_URL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize, Deserialize)]
pub enum LlmError {
    /// Timeouts, rate limits and server-side failures. Retried.
    #[error("transient: {0}")]
    Transient(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("gave up after {attempts} attempts: {last}")]
    ExhaustedRetries { attempts: usize, last: String },
    #[error("missing credentials: set {API_KEY_ENV}")]
    MissingCredentials,
}

impl LlmError {
    pub fn is_transient(&self) -> bool {
        matches!(self, LlmError::Transient(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    /// Single user message at temperature 0.
    pub fn new(model: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            messages: vec![Message::user(prompt)],
            temperature: 0.0,
            max_tokens: None,
        }
    }

    pub fn prompt(&self) -> &str {
        self.messages
            .last()
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, rhs: Usage) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub usage: Usage,
    pub latency_ms: u64,
}

impl ChatResponse {
    pub fn text(content: impl Into<String>) -> Self {
        Self {
            content: content.into(),
            usage: Usage::default(),
            latency_ms: 0,
        }
    }
}

/// Anything that can answer a chat request.
pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

impl<C: ChatClient + ?Sized> ChatClient for Arc<C> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}

impl<C: ChatClient + ?Sized> ChatClient for &C {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}

/// Exponential backoff: `initial * factor^k`, capped at `max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backoff {
    pub initial_ms: u64,
    pub factor: f64,
    pub max_ms: u64,
}

impl Default for Backoff {
    fn default() -> Self {
        Self {
            initial_ms: 500,
            factor: 2.0,
            max_ms: 30_000,
        }
    }
}

impl Backoff {
    pub fn none() -> Self {
        Self {
            initial_ms: 0,
            factor: 1.0,
            max_ms: 0,
        }
    }

    pub fn delay(&self, retry: usize) -> Duration {
        let ms = self.initial_ms as f64 * self.factor.powi(retry as i32);
        Duration::from_millis(ms.min(self.max_ms as f64) as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientPolicy {
    pub max_retries: usize,
    pub backoff: Backoff,
    pub concurrency: usize,
    pub primary_model: String,
    pub fallback_model: Option<String>,
}

impl Default for ClientPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff: Backoff::default(),
            concurrency: 4,
            primary_model: "gpt-4o-mini".into(),
            fallback_model: Some("gpt-4o-2024-08-06".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttemptRecord {
    pub model: String,
    pub attempt: usize,
    pub outcome: Result<Usage, LlmError>,
}

/// Counting semaphore.
struct Limiter {
    bound: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn acquire(&self) -> LimiterGuard<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.bound {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

/// Adds retries, a concurrency bound and an attempt log to a transport.
pub struct RetryingClient<C> {
    inner: C,
    policy: ClientPolicy,
    limiter: Limiter,
    attempts: Mutex<Vec<AttemptRecord>>,
    audit: Option<Mutex<File>>,
}

impl<C: ChatClient> RetryingClient<C> {
    pub fn new(inner: C, policy: ClientPolicy) -> Self {
        let bound = policy.concurrency.max(1);
        Self {
            inner,
            policy,
            limiter: Limiter {
                bound,
                in_flight: Mutex::new(0),
                freed: Condvar::new(),
            },
            attempts: Mutex::new(Vec::new()),
            audit: None,
        }
    }

    /// Appends every raw request/response pair to a JSONL file.
    pub fn with_audit_log(mut self, path: &std::path::Path) -> std::io::Result<Self> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        self.audit = Some(Mutex::new(file));
        Ok(self)
    }

    pub fn policy(&self) -> &ClientPolicy {
        &self.policy
    }

    pub fn inner(&self) -> &C {
        &self.inner
    }

    pub fn attempts(&self) -> Vec<AttemptRecord> {
        self.attempts.lock().unwrap().clone()
    }

    fn audit(&self, request: &ChatRequest, outcome: &Result<ChatResponse, LlmError>) {
        if let Some(file) = &self.audit {
            let line = serde_json::json!({ "request": request, "outcome": outcome });
            let mut f = file.lock().unwrap();
            if let Err(e) = writeln!(f, "{line}") {
                log::warn!("audit log write failed: {e}");
            }
        }
    }
}

impl<C: ChatClient> ChatClient for RetryingClient<C> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let total = 1 + self.policy.max_retries;
        let mut last = None;
        for attempt in 0..total {
            if attempt > 0 {
                std::thread::sleep(self.policy.backoff.delay(attempt - 1));
            }
            let outcome = {
                let _slot = self.limiter.acquire();
                self.inner.complete(request)
            };
            self.audit(request, &outcome);
            self.attempts.lock().unwrap().push(AttemptRecord {
                model: request.model.clone(),
                attempt: attempt + 1,
                outcome: outcome.as_ref().map(|r| r.usage).map_err(Clone::clone),
            });
            match outcome {
                Ok(resp) => return Ok(resp),
                Err(e) if e.is_transient() => {
                    log::debug!("attempt {} of {total} failed: {e}", attempt + 1);
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(LlmError::ExhaustedRetries {
            attempts: total,
            last: last.map(|e| e.to_string()).unwrap_or_default(),
        })
    }
}

/// Single-attempt transport speaking the chat-completions JSON protocol.
pub struct HttpClient {
    http: reqwest::blocking::Client,
    base_url: String,
    api_key: String,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: Message,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl HttpClient {
    pub fn new(
        base_url: impl Into<String>,
        api_key: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, LlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Rejected(e.to_string()))?;
        Ok(Self {
            http,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
        })
    }

    /// Reads the key and optional base URL from the environment.
    pub fn from_env() -> Result<Self, LlmError> {
        let key = std::env::var(API_KEY_ENV)
            .or_else(|_| std::env::var("OPENAI_API_KEY"))
            .map_err(|_| LlmError::MissingCredentials)?;
        let base = std::env::var(BASE_URL_ENV).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
        Self::new(base, key, Duration::from_secs(120))
    }
}

impl ChatClient for HttpClient {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let started = Instant::now();
        let resp = self
            .http
            .post(format!("{}/chat/completions", self.base_url))
            .bearer_auth(&self.api_key)
            .json(request)
            .send()
            .map_err(|e| LlmError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(LlmError::Auth(status.to_string()));
        }
        if status.as_u16() == 408 || status.as_u16() == 429 || status.is_server_error() {
            return Err(LlmError::Transient(status.to_string()));
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(LlmError::Rejected(format!("{status}: {body}")));
        }
        let wire: WireResponse = resp
            .json()
            .map_err(|e| LlmError::Malformed(e.to_string()))?;
        let content = wire
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| LlmError::Malformed("no choices".into()))?;
        let usage = wire
            .usage
            .map(|u| Usage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            })
            .unwrap_or_default();
        Ok(ChatResponse {
            content,
            usage,
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

pub type MockReply = Result<String, LlmError>;
type Responder = dyn Fn(&ChatRequest) -> MockReply + Send + Sync;

enum Script {
    Transcript(Mutex<VecDeque<MockReply>>),
    Responder(Box<Responder>),
}

/// Test double. Replays scripted replies and records every request.
pub struct MockClient {
    script: Script,
    requests: Mutex<Vec<ChatRequest>>,
    in_flight: Mutex<(usize, usize)>,
    delay: Duration,
}

impl MockClient {
    /// Replays `transcript` in order; errors once it runs out.
    pub fn from_transcript(transcript: Vec<MockReply>) -> Self {
        Self::with_script(Script::Transcript(Mutex::new(transcript.into())))
    }

    /// Answers each request with `f`; order-independent, so safe under
    /// concurrent workers.
    pub fn from_fn(f: impl Fn(&ChatRequest) -> MockReply + Send + Sync + 'static) -> Self {
        Self::with_script(Script::Responder(Box::new(f)))
    }

    fn with_script(script: Script) -> Self {
        Self {
            script,
            requests: Mutex::new(Vec::new()),
            in_flight: Mutex::new((0, 0)),
            delay: Duration::ZERO,
        }
    }

    /// Holds each request open for `delay`, to exercise concurrency.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }

    /// Highest number of simultaneous requests observed.
    pub fn max_in_flight(&self) -> usize {
        self.in_flight.lock().unwrap().1
    }
}

impl ChatClient for MockClient {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        {
            let mut g = self.in_flight.lock().unwrap();
            g.0 += 1;
            g.1 = g.1.max(g.0);
        }
        self.requests.lock().unwrap().push(request.clone());
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        let reply = match &self.script {
            Script::Transcript(queue) => queue
                .lock()
                .unwrap()
                .pop_front()
                .unwrap_or_else(|| Err(LlmError::Rejected("mock transcript exhausted".into()))),
            Script::Responder(f) => f(request),
        };
        self.in_flight.lock().unwrap().0 -= 1;
        reply.map(|content| {
            let usage = Usage {
                prompt_tokens: request.prompt().chars().count() as u64,
                completion_tokens: content.chars().count() as u64,
            };
            ChatResponse {
                content,
                usage,
                latency_ms: 0,
            }
        })
    }
}
