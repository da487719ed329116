//! Uniform access to the system under test.
//!
//! A subject is anything implementing [`CompletionBackend`]: a remote
//! completions or chat endpoint ([`HttpClient`]) or a local scripted agent
//! ([`ScriptedAgent`]). The runner asks a [`BackendFactory`] for one backend
//! per simulation.

mod http;
mod scripted;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpClient, RequestLog};
pub use scripted::{AgentSpec, ScriptedAgent};
pub(crate) use scripted::{BanditView, SupervisedView};

/// System message sent on the zero-shot trial when the chat fallback is enabled.
pub const ZERO_SHOT_SYSTEM_MESSAGE: &str = "If no previous examples, sample y from your prior distribution. But do not give any non numerical answer! Even if you are unsure, try to predict y as well as possible.";

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("scripted agent: {0}")]
    Scripted(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_name: String,
    pub system_message: Option<String>,
    /// The prompt contains no previous examples at all.
    #[serde(default)]
    pub zero_shot: bool,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            temperature: 0.0,
            max_tokens: 16,
            model_name: model_name.into(),
            system_message: None,
            zero_shot: false,
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ClientError::Config(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(ClientError::Config("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpCompletions,
    HttpChat,
    Scripted,
}

impl BackendKind {
    pub fn is_http(self) -> bool {
        matches!(self, BackendKind::HttpCompletions | BackendKind::HttpChat)
    }
}

/// Secret string that never appears in `Debug` output or serialized configs.
#[derive(Clone, PartialEq, Eq)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        Self(key.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(***)")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub base_url: String,
    pub model_name: String,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    #[serde(skip)]
    pub api_key: Option<ApiKey>,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    /// Upper bound on simultaneous in-flight requests.
    pub max_concurrency: usize,
    /// Send [`ZERO_SHOT_SYSTEM_MESSAGE`] on the zero-shot trial (chat only).
    pub zero_shot_fallback: bool,
    /// JSON-lines request log; relative paths resolve against the run directory.
    pub request_log: Option<String>,
    /// Behaviour of the scripted subject.
    pub agent: Option<AgentSpec>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Scripted,
            base_url: "https://api.openai.com/v1".into(),
            model_name: "text-davinci-002".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            api_key: None,
            timeout_secs: 60.0,
            max_retries: 5,
            backoff_base_ms: 1000,
            backoff_max_ms: 60_000,
            max_concurrency: 4,
            zero_shot_fallback: false,
            request_log: None,
            agent: None,
        }
    }
}

impl BackendConfig {
    /// Field-level problems with the configuration; empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            out.push(format!("backend.timeout_secs: must be > 0, got {}", self.timeout_secs));
        }
        if self.max_concurrency == 0 {
            out.push("backend.max_concurrency: must be >= 1".into());
        }
        if self.kind.is_http() {
            if reqwest::Url::parse(&self.base_url).is_err() {
                out.push(format!("backend.base_url: not a valid URL: {:?}", self.base_url));
            }
            if self.model_name.is_empty() {
                out.push("backend.model_name: must not be empty".into());
            }
        }
        if self.kind == BackendKind::Scripted && self.agent.is_none() {
            out.push("backend.agent: required when backend.kind = \"scripted\"".into());
        }
        if self.zero_shot_fallback && self.kind != BackendKind::HttpChat {
            out.push("backend.zero_shot_fallback: only supported with kind = \"http_chat\"".into());
        }
        out
    }

    /// Read the API key from the configured environment variable.
    pub fn resolve_api_key(&mut self) -> Result<(), ClientError> {
        if !self.kind.is_http() || self.api_key.is_some() {
            return Ok(());
        }
        match std::env::var(&self.api_key_env) {
            Ok(v) if !v.trim().is_empty() => {
                self.api_key = Some(ApiKey::new(v.trim()));
                Ok(())
            }
            _ => Err(ClientError::Config(format!(
                "API key missing: environment variable {} is not set",
                self.api_key_env
            ))),
        }
    }
}

/// The subject of an experiment.
pub trait CompletionBackend: Send {
    fn complete(&mut self, request: &CompletionRequest) -> Result<String, ClientError>;
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for Box<B> {
    fn complete(&mut self, request: &CompletionRequest) -> Result<String, ClientError> {
        (**self).complete(request)
    }
}

/// Hands out one backend per simulation.
pub trait BackendFactory: Sync {
    fn backend(&self, simulation: usize, seed: u64) -> Result<Box<dyn CompletionBackend>, ClientError>;
}

impl<F> BackendFactory for F
where
    F: Fn(usize, u64) -> Result<Box<dyn CompletionBackend>, ClientError> + Sync,
{
    fn backend(&self, simulation: usize, seed: u64) -> Result<Box<dyn CompletionBackend>, ClientError> {
        self(simulation, seed)
    }
}

/// Backends built from a [`BackendConfig`]: HTTP clients share one
/// connection pool and concurrency limit, scripted agents are seeded per
/// simulation.
pub struct ConfiguredBackends {
    config: BackendConfig,
    http: Option<HttpClient>,
}

impl ConfiguredBackends {
    pub fn new(config: &BackendConfig) -> Result<Self, ClientError> {
        let problems = config.problems();
        if !problems.is_empty() {
            return Err(ClientError::Config(problems.join("; ")));
        }
        let http = if config.kind.is_http() { Some(HttpClient::new(config)?) } else { None };
        Ok(Self { config: config.clone(), http })
    }

    pub fn with_http_client(config: &BackendConfig, client: HttpClient) -> Self {
        Self { config: config.clone(), http: Some(client) }
    }
}

impl BackendFactory for ConfiguredBackends {
    fn backend(&self, _simulation: usize, seed: u64) -> Result<Box<dyn CompletionBackend>, ClientError> {
        match (&self.http, &self.config.agent) {
            (Some(client), _) => Ok(Box::new(client.clone())),
            (None, Some(agent)) => Ok(Box::new(ScriptedAgent::new(agent.clone(), seed))),
            (None, None) => Err(ClientError::Config("scripted backend without an agent".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn api_key_is_redacted() {
        let mut c = BackendConfig::default();
        c.api_key = Some(ApiKey::new("sk-secret"));
        let dbg = format!("{c:?}");
        assert!(!dbg.contains("sk-secret"));
        let ser = toml::to_string(&c).unwrap();
        assert!(!ser.contains("sk-secret"));
    }

    #[test]
    fn config_problems() {
        let c = BackendConfig { kind: BackendKind::HttpCompletions, base_url: "not a url".into(), ..Default::default() };
        assert!(c.problems().iter().any(|p| p.starts_with("backend.base_url")));
        let c = BackendConfig::default();
        assert!(c.problems().iter().any(|p| p.starts_with("backend.agent")));
    }

    #[test]
    fn missing_key_fails_fast() {
        let mut c = BackendConfig {
            kind: BackendKind::HttpChat,
            api_key_env: "MICL_TEST_KEY_THAT_IS_NOT_SET".into(),
            ..Default::default()
        };
        assert!(matches!(c.resolve_api_key(), Err(ClientError::Config(_))));
    }

    #[test]
    fn request_temperature_bounds() {
        let mut r = CompletionRequest::new("p", "m");
        assert!(r.validate().is_ok());
        r.temperature = 2.5;
        assert!(r.validate().is_err());
    }
}
