//! Blocking client for completions and chat endpoints with retry.

use std::io::Write;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::Rng;
use reqwest::blocking::Client;
use reqwest::header::{HeaderMap, RETRY_AFTER};
use serde_json::{json, Value};

use super::{BackendConfig, BackendKind, ClientError, CompletionBackend, CompletionRequest, ZERO_SHOT_SYSTEM_MESSAGE};

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Self { permits: Mutex::new(n), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock().expect("semaphore poisoned");
        while *p == 0 {
            p = self.cv.wait(p).expect("semaphore poisoned");
        }
        *p -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("semaphore poisoned") += 1;
        self.0.cv.notify_one();
    }
}

/// Sink for the JSON-lines request log. Never receives the API key.
#[derive(Clone)]
pub struct RequestLog {
    sink: Arc<Mutex<Box<dyn Write + Send>>>,
}

impl RequestLog {
    pub fn new(sink: Box<dyn Write + Send>) -> Self {
        Self { sink: Arc::new(Mutex::new(sink)) }
    }

    fn write(&self, event: Value) {
        if let Ok(mut sink) = self.sink.lock() {
            let _ = writeln!(sink, "{event}");
            let _ = sink.flush();
        }
    }
}

struct Inner {
    config: BackendConfig,
    http: Client,
    limiter: Semaphore,
    log: Option<RequestLog>,
}

/// Shareable HTTP backend; clones share the connection pool and the
/// concurrency limit.
#[derive(Clone)]
pub struct HttpClient {
    inner: Arc<Inner>,
}

enum Failure {
    Retryable { message: String, retry_after: Option<Duration> },
    Fatal(ClientError),
}

impl HttpClient {
    pub fn new(config: &BackendConfig) -> Result<Self, ClientError> {
        Self::with_log(config, None)
    }

    pub fn with_log(config: &BackendConfig, log: Option<RequestLog>) -> Result<Self, ClientError> {
        let http = Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| ClientError::Config(e.to_string()))?;
        Ok(Self {
            inner: Arc::new(Inner {
                config: config.clone(),
                http,
                limiter: Semaphore::new(config.max_concurrency.max(1)),
                log,
            }),
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.inner.config
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}/{}", self.inner.config.base_url.trim_end_matches('/'), path)
    }

    /// Completions endpoint; returns the text of the first choice verbatim.
    pub fn complete(&self, request: &CompletionRequest) -> Result<String, ClientError> {
        request.validate()?;
        let body = json!({
            "model": request.model_name,
            "prompt": request.prompt,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let response = self.post_with_retry(&self.endpoint("completions"), &body)?;
        response
            .pointer("/choices/0/text")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| ClientError::Protocol("missing choices[0].text".into()))
    }

    /// Chat endpoint. The prompt is sent as a single user message.
    pub fn chat_complete(&self, request: &CompletionRequest) -> Result<String, ClientError> {
        if self.inner.config.kind != BackendKind::HttpChat {
            return Err(ClientError::Config("chat_complete requires kind = http_chat".into()));
        }
        request.validate()?;
        let body = json!({
            "model": request.model_name,
            "messages": chat_messages(request, self.inner.config.zero_shot_fallback),
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let response = self.post_with_retry(&self.endpoint("chat/completions"), &body)?;
        response
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| ClientError::Protocol("missing choices[0].message.content".into()))
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let cfg = &self.inner.config;
        let base = cfg.backoff_base_ms as f64 * 2f64.powi(attempt as i32);
        let jitter = rand::rng().random_range(0.5..1.5);
        Duration::from_millis((base * jitter).min(cfg.backoff_max_ms as f64) as u64)
    }

    fn log(&self, event: Value) {
        if let Some(log) = &self.inner.log {
            log.write(event);
        }
    }

    fn post_with_retry(&self, url: &str, body: &Value) -> Result<Value, ClientError> {
        let max_attempts = self.inner.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=max_attempts {
            self.log(json!({ "event": "request", "attempt": attempt, "url": url, "body": body }));
            let outcome = {
                let _permit = self.inner.limiter.acquire();
                self.post_once(url, body)
            };
            match outcome {
                Ok(v) => {
                    self.log(json!({ "event": "response", "attempt": attempt, "status": 200, "body": v }));
                    return Ok(v);
                }
                Err(Failure::Fatal(e)) => {
                    self.log(json!({ "event": "error", "attempt": attempt, "error": e.to_string() }));
                    return Err(e);
                }
                Err(Failure::Retryable { message, retry_after }) => {
                    last = message;
                    if attempt == max_attempts {
                        break;
                    }
                    let delay = retry_after.unwrap_or_else(|| self.backoff(attempt - 1));
                    tracing::warn!(attempt, delay_ms = delay.as_millis() as u64, error = %last, "transient failure, retrying");
                    self.log(json!({
                        "event": "retry",
                        "attempt": attempt,
                        "error": last,
                        "delay_ms": delay.as_millis() as u64,
                    }));
                    std::thread::sleep(delay);
                }
            }
        }
        self.log(json!({ "event": "exhausted", "attempts": max_attempts, "error": last }));
        Err(ClientError::Transport { attempts: max_attempts, message: last })
    }

    fn post_once(&self, url: &str, body: &Value) -> Result<Value, Failure> {
        let mut req = self.inner.http.post(url).json(body);
        if let Some(key) = &self.inner.config.api_key {
            req = req.bearer_auth(key.expose());
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Err(Failure::Retryable { message: e.to_string(), retry_after: None }),
        };
        let status = resp.status();
        let retry_after = retry_after(resp.headers());
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Err(Failure::Retryable { message: e.to_string(), retry_after: None }),
        };
        if status.is_success() {
            return serde_json::from_str(&text).map_err(|e| Failure::Fatal(ClientError::Protocol(e.to_string())));
        }
        let code = status.as_u16();
        if code == 429 || code == 408 || status.is_server_error() {
            Err(Failure::Retryable { message: format!("HTTP {code}: {text}"), retry_after })
        } else {
            Err(Failure::Fatal(ClientError::Http { status: code, body: text }))
        }
    }
}

fn retry_after(headers: &HeaderMap) -> Option<Duration> {
    let secs: f64 = headers.get(RETRY_AFTER)?.to_str().ok()?.trim().parse().ok()?;
    (secs.is_finite() && secs >= 0.0).then(|| Duration::from_secs_f64(secs))
}

/// Messages of a chat request: optional system messages, then the prompt.
pub(crate) fn chat_messages(request: &CompletionRequest, zero_shot_fallback: bool) -> Vec<Value> {
    let mut messages = Vec::new();
    if zero_shot_fallback && request.zero_shot {
        messages.push(json!({ "role": "system", "content": ZERO_SHOT_SYSTEM_MESSAGE }));
    }
    if let Some(system) = &request.system_message {
        messages.push(json!({ "role": "system", "content": system }));
    }
    messages.push(json!({ "role": "user", "content": request.prompt }));
    messages
}

impl CompletionBackend for HttpClient {
    fn complete(&mut self, request: &CompletionRequest) -> Result<String, ClientError> {
        match self.inner.config.kind {
            BackendKind::HttpChat => HttpClient::chat_complete(self, request),
            _ => HttpClient::complete(self, request),
        }
    }
}
