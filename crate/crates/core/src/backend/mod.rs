//! Chat-completion backends.
//!
//! Every backend answers a single-prompt completion. [`CachedBackend`]
//! stores answers on disk keyed by [`CompletionKey`]; [`ReplayBackend`]
//! serves answers from a recorded transcript; [`ScriptedBackend`] answers
//! from rules and is used to build deterministic fixtures.

mod cache;
mod http;
mod replay;
mod scripted;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{read_transcript, write_transcript, CachedBackend, DiskCache, RecordingBackend, TranscriptEntry};
pub use http::HttpBackend;
pub use replay::ReplayBackend;
pub use scripted::{ScriptRule, ScriptedBackend};

/// Appended to the prompt when a reply fails validation.
pub const REPAIR_SUFFIX: &str =
    "Your previous reply was not valid JSON per the template. Reply with only the JSON.";

/// Default environment variable holding the API key.
pub const DEFAULT_API_KEY_ENV: &str = "GIER_API_KEY";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("network error: {0}")]
    Network(String),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    Malformed(String),
    #[error("replay miss for digest {digest}")]
    ReplayMiss { digest: String },
    #[error("no scripted rule matches the prompt (digest {digest})")]
    ScriptMiss { digest: String },
    #[error("retries exhausted after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: usize, last: String },
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Network(_) | BackendError::Timeout(_) => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait Backend: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, BackendError>;

    fn model_name(&self) -> &str;

    fn temperature(&self) -> f64 {
        0.0
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        (**self).complete(prompt)
    }

    fn model_name(&self) -> &str {
        (**self).model_name()
    }

    fn temperature(&self) -> f64 {
        (**self).temperature()
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        (**self).complete(prompt)
    }

    fn model_name(&self) -> &str {
        (**self).model_name()
    }

    fn temperature(&self) -> f64 {
        (**self).temperature()
    }
}

/// Content hash of `(model, temperature, prompt)`; 64 lowercase hex chars.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CompletionKey(String);

impl CompletionKey {
    pub fn new(model_name: &str, temperature: f64, prompt: &str) -> Self {
        let encoded = serde_json::to_string(&(model_name, temperature, prompt))
            .expect("key tuple serializes");
        CompletionKey(hex::encode(Sha256::digest(encoded.as_bytes())))
    }

    pub fn for_backend(backend: &dyn Backend, prompt: &str) -> Self {
        Self::new(backend.model_name(), backend.temperature(), prompt)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for CompletionKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Replay,
    Scripted,
}

fn default_model() -> String {
    "gpt-4.1".into()
}

fn default_retries() -> usize {
    2
}

fn default_timeout() -> u64 {
    120
}

fn default_api_key_env() -> String {
    DEFAULT_API_KEY_ENV.into()
}

fn default_context_limit() -> usize {
    128_000
}

fn default_strict() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default = "default_model")]
    pub model_name: String,
    #[serde(default)]
    pub temperature: f64,
    /// Repair retries after an invalid reply; also transport retries for HTTP.
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    /// Recorded transcript for `replay`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<PathBuf>,
    /// Rule file for `scripted`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    /// Replay misses are errors when set.
    #[serde(default = "default_strict")]
    pub strict: bool,
    #[serde(default = "default_context_limit")]
    pub context_limit: usize,
}

impl BackendConfig {
    pub fn new(kind: BackendKind, model_name: impl Into<String>) -> Self {
        BackendConfig {
            kind,
            endpoint: None,
            model_name: model_name.into(),
            temperature: 0.0,
            max_retries: default_retries(),
            timeout_secs: default_timeout(),
            api_key_env: default_api_key_env(),
            transcript: None,
            script: None,
            strict: true,
            context_limit: default_context_limit(),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }

    /// Builds the configured backend. Relative paths are resolved by the
    /// caller.
    pub fn build(&self) -> Result<Box<dyn Backend>, BackendError> {
        if self.temperature != 0.0 {
            log::warn!(
                "temperature {} is not zero; results are not reproducible",
                self.temperature
            );
        }
        match self.kind {
            BackendKind::Http => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .ok_or_else(|| BackendError::Config("http backend needs an endpoint".into()))?;
                let api_key = std::env::var(&self.api_key_env).ok();
                Ok(Box::new(
                    HttpBackend::new(endpoint, &self.model_name, self.timeout())
                        .with_temperature(self.temperature)
                        .with_api_key(api_key)
                        .with_max_retries(self.max_retries),
                ))
            }
            BackendKind::Replay => {
                let path = self.transcript.as_ref().ok_or_else(|| {
                    BackendError::Config("replay backend needs a transcript".into())
                })?;
                let entries = read_transcript(path)?;
                Ok(Box::new(
                    ReplayBackend::new(&self.model_name, entries)
                        .with_temperature(self.temperature)
                        .strict(self.strict),
                ))
            }
            BackendKind::Scripted => {
                let path = self.script.as_ref().ok_or_else(|| {
                    BackendError::Config("scripted backend needs a script file".into())
                })?;
                Ok(Box::new(
                    ScriptedBackend::from_file_or_model(path, &self.model_name)?
                        .with_temperature(self.temperature),
                ))
            }
        }
    }
}

/// Counts requests that reach the wrapped backend.
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B: Backend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        CountingBackend {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn into_inner(self) -> B {
        self.inner
    }
}

impl<B: Backend> Backend for CountingBackend<B> {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(prompt)
    }

    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn temperature(&self) -> f64 {
        self.inner.temperature()
    }
}

/// Prompt for repair attempt `attempt` (1-based): the original prompt with
/// the repair line appended `attempt` times, so each attempt has its own
/// cache key.
pub fn repair_prompt(prompt: &str, attempt: usize) -> String {
    let mut out = String::with_capacity(prompt.len() + attempt * (REPAIR_SUFFIX.len() + 2));
    out.push_str(prompt);
    for _ in 0..attempt {
        out.push_str("\n\n");
        out.push_str(REPAIR_SUFFIX);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_is_fixed_length_hex() {
        let k = CompletionKey::new("m", 0.0, "hello");
        assert_eq!(k.as_str().len(), 64);
        assert!(k.as_str().chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));
        assert_eq!(k, CompletionKey::new("m", 0.0, "hello"));
    }

    #[test]
    fn key_separates_fields() {
        let base = CompletionKey::new("m", 0.0, "hello");
        assert_ne!(base, CompletionKey::new("m2", 0.0, "hello"));
        assert_ne!(base, CompletionKey::new("m", 0.5, "hello"));
        assert_ne!(base, CompletionKey::new("m", 0.0, "hello!"));
        // no ambiguity from concatenation
        assert_ne!(
            CompletionKey::new("ab", 0.0, "c"),
            CompletionKey::new("a", 0.0, "bc")
        );
    }

    #[test]
    fn repair_prompts_are_distinct() {
        let p1 = repair_prompt("P", 1);
        let p2 = repair_prompt("P", 2);
        assert!(p1.ends_with(REPAIR_SUFFIX));
        assert_ne!(p1, p2);
        assert_eq!(repair_prompt("P", 0), "P");
    }

    #[test]
    fn retryable_classification() {
        assert!(BackendError::Timeout("t".into()).is_retryable());
        assert!(BackendError::Status { status: 503, body: String::new() }.is_retryable());
        assert!(!BackendError::Status { status: 401, body: String::new() }.is_retryable());
        assert!(!BackendError::ReplayMiss { digest: "d".into() }.is_retryable());
    }

    #[test]
    fn config_defaults() {
        let cfg: BackendConfig = serde_json::from_str(r#"{"kind":"replay"}"#).unwrap();
        assert_eq!(cfg.temperature, 0.0);
        assert_eq!(cfg.model_name, "gpt-4.1");
        assert!(cfg.strict);
        assert!(cfg.build().is_err());
    }
}
