//! Completion providers.
//!
//! Every backend implements [`Provider`]. The HTTP backend speaks the
//! chat-completions wire dialect; the mock backend replays scripted responses
//! keyed by `(question_id, order)` and is what the tests and offline runs use.

mod http;
mod mock;
mod ratelimit;
mod retry;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::sha256_hex;
use crate::prompts::RenderedPrompt;

pub use http::{api_key_env_var, HttpProvider};
pub use mock::{MockEntry, MockError, MockProvider};
pub use ratelimit::TokenBucket;
pub use retry::{with_retries, RetryPolicy, Sleeper, ThreadSleeper};

/// Provider id that selects the scripted mock backend in configs.
pub const MOCK_PROVIDER_ID: &str = "mock";

fn default_max_tokens() -> u32 {
    1024
}

fn default_timeout() -> f64 {
    60.0
}

fn default_rps() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub provider_id: String,
    pub model_name: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub endpoint_url: String,
    #[serde(default = "default_timeout")]
    pub request_timeout_s: f64,
    /// Client-side token-bucket rate; `<= 0` disables pacing.
    #[serde(default = "default_rps")]
    pub rate_limit_rps: f64,
}

impl ModelSpec {
    pub fn new(provider_id: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            provider_id: provider_id.into(),
            model_name: model_name.into(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            endpoint_url: String::new(),
            request_timeout_s: default_timeout(),
            rate_limit_rps: default_rps(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.provider_id.is_empty() || self.model_name.is_empty() {
            return Err("provider_id and model_name must be nonempty".into());
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be positive".into());
        }
        if !self.request_timeout_s.is_finite() || self.request_timeout_s <= 0.0 {
            return Err(format!("request_timeout_s must be positive, got {}", self.request_timeout_s));
        }
        Ok(())
    }

    pub fn is_mock(&self) -> bool {
        self.provider_id == MOCK_PROVIDER_ID
    }
}

/// Cache key for one completion request.
///
/// Covers provider, model, sampling parameters, prompt text and template
/// version. Endpoint, timeout and pacing do not change the completion and are
/// not part of the key.
pub fn request_fingerprint(spec: &ModelSpec, prompt: &RenderedPrompt) -> String {
    let canonical = serde_json::to_string(&(
        &spec.provider_id,
        &spec.model_name,
        spec.temperature,
        spec.max_tokens,
        &prompt.text,
        &prompt.template_version,
    ))
    .expect("fingerprint tuple serialises");
    sha256_hex(canonical)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Filtered,
    Other,
}

impl FinishReason {
    pub fn from_wire(s: Option<&str>) -> Self {
        match s {
            Some("stop") | Some("end_turn") | Some("stop_sequence") => FinishReason::Stop,
            Some("length") | Some("max_tokens") => FinishReason::Length,
            Some("content_filter") => FinishReason::Filtered,
            _ => FinishReason::Other,
        }
    }
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
    pub from_cache: bool,
    pub request_fingerprint: String,
    /// Upstream attempts it took to obtain this response.
    #[serde(default = "one")]
    pub attempts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderErrorKind {
    Auth,
    RateLimited,
    Timeout,
    Malformed,
    Upstream5xx,
    Exhausted,
}

impl ProviderErrorKind {
    pub fn is_retryable(self) -> bool {
        matches!(
            self,
            ProviderErrorKind::RateLimited | ProviderErrorKind::Timeout | ProviderErrorKind::Upstream5xx
        )
    }
}

impl fmt::Display for ProviderErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ProviderErrorKind::Auth => "auth",
            ProviderErrorKind::RateLimited => "rate_limited",
            ProviderErrorKind::Timeout => "timeout",
            ProviderErrorKind::Malformed => "malformed",
            ProviderErrorKind::Upstream5xx => "upstream_5xx",
            ProviderErrorKind::Exhausted => "exhausted",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{kind}: {detail}")]
pub struct ProviderError {
    pub kind: ProviderErrorKind,
    pub retryable: bool,
    pub detail: String,
}

impl ProviderError {
    pub fn new(kind: ProviderErrorKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            retryable: kind.is_retryable(),
            detail: detail.into(),
        }
    }
}

/// A completion backend. Implementations must be safe to call concurrently.
pub trait Provider: Send + Sync {
    fn complete(&self, spec: &ModelSpec, prompt: &RenderedPrompt) -> Result<ModelResponse, ProviderError>;
}

impl<P: Provider + ?Sized> Provider for &P {
    fn complete(&self, spec: &ModelSpec, prompt: &RenderedPrompt) -> Result<ModelResponse, ProviderError> {
        (**self).complete(spec, prompt)
    }
}

impl<P: Provider + ?Sized> Provider for Box<P> {
    fn complete(&self, spec: &ModelSpec, prompt: &RenderedPrompt) -> Result<ModelResponse, ProviderError> {
        (**self).complete(spec, prompt)
    }
}

impl<P: Provider + ?Sized> Provider for std::sync::Arc<P> {
    fn complete(&self, spec: &ModelSpec, prompt: &RenderedPrompt) -> Result<ModelResponse, ProviderError> {
        (**self).complete(spec, prompt)
    }
}
