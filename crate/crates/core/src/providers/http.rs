use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{
    request_fingerprint, with_retries, FinishReason, ModelResponse, ModelSpec, Provider, ProviderError,
    ProviderErrorKind, RetryPolicy, Sleeper, ThreadSleeper, TokenBucket,
};
use crate::prompts::RenderedPrompt;

/// `openai-compat` -> `OPENAI_COMPAT_API_KEY`.
pub fn api_key_env_var(provider_id: &str) -> String {
    let id: String = provider_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
        .collect();
    format!("{id}_API_KEY")
}

/// Chat-completions client with client-side pacing and retry.
pub struct HttpProvider {
    client: reqwest::blocking::Client,
    api_key: Option<String>,
    limiter: TokenBucket,
    policy: RetryPolicy,
    sleeper: Arc<dyn Sleeper>,
}

impl HttpProvider {
    pub fn new(api_key: Option<String>, rate_limit_rps: f64) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| ProviderError::new(ProviderErrorKind::Malformed, format!("building HTTP client: {e}")))?;
        Ok(Self {
            client,
            api_key,
            limiter: TokenBucket::new(rate_limit_rps),
            policy: RetryPolicy::default(),
            sleeper: Arc::new(ThreadSleeper),
        })
    }

    /// Reads the key from `<PROVIDER_ID>_API_KEY`.
    pub fn from_env(spec: &ModelSpec) -> Result<Self, ProviderError> {
        let var = api_key_env_var(&spec.provider_id);
        let key = std::env::var(&var)
            .map_err(|_| ProviderError::new(ProviderErrorKind::Auth, format!("environment variable {var} is not set")))?;
        Self::new(Some(key), spec.rate_limit_rps)
    }

    pub fn with_retry_policy(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_sleeper(mut self, sleeper: Arc<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }

    fn attempt(&self, spec: &ModelSpec, body: &Value) -> Result<Value, ProviderError> {
        self.limiter.acquire();
        let mut req = self
            .client
            .post(&spec.endpoint_url)
            .timeout(Duration::from_secs_f64(spec.request_timeout_s))
            .json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                ProviderError::new(ProviderErrorKind::Timeout, e.to_string())
            } else {
                ProviderError::new(ProviderErrorKind::Upstream5xx, format!("connection error: {e}"))
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                ProviderError::new(ProviderErrorKind::Timeout, e.to_string())
            } else {
                ProviderError::new(ProviderErrorKind::Upstream5xx, format!("reading body: {e}"))
            }
        })?;
        if !status.is_success() {
            let kind = match status.as_u16() {
                401 | 403 => ProviderErrorKind::Auth,
                429 => ProviderErrorKind::RateLimited,
                408 => ProviderErrorKind::Timeout,
                s if s >= 500 => ProviderErrorKind::Upstream5xx,
                _ => ProviderErrorKind::Malformed,
            };
            let snippet: String = text.chars().take(200).collect();
            return Err(ProviderError::new(kind, format!("HTTP {status}: {snippet}")));
        }
        serde_json::from_str(&text)
            .map_err(|e| ProviderError::new(ProviderErrorKind::Malformed, format!("response is not JSON: {e}")))
    }
}

pub(crate) fn request_body(spec: &ModelSpec, prompt: &RenderedPrompt) -> Value {
    json!({
        "model": spec.model_name,
        "messages": [{ "role": "user", "content": prompt.text }],
        "temperature": spec.temperature,
        "max_tokens": spec.max_tokens,
    })
}

/// Pulls text, finish reason and usage out of a chat-completions reply.
pub(crate) fn parse_reply(reply: &Value) -> Result<(String, FinishReason, u64, u64), ProviderError> {
    let malformed = |m: &str| ProviderError::new(ProviderErrorKind::Malformed, m.to_string());
    let choice = reply
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| malformed("reply has no choices[0]"))?;
    let text = choice
        .get("message")
        .and_then(|m| m.get("content"))
        .and_then(Value::as_str)
        .ok_or_else(|| malformed("choices[0].message.content is missing or not a string"))?;
    let finish = FinishReason::from_wire(choice.get("finish_reason").and_then(Value::as_str));
    let usage = reply.get("usage");
    let count = |k: &str| usage.and_then(|u| u.get(k)).and_then(Value::as_u64).unwrap_or(0);
    Ok((text.to_string(), finish, count("prompt_tokens"), count("completion_tokens")))
}

impl Provider for HttpProvider {
    fn complete(&self, spec: &ModelSpec, prompt: &RenderedPrompt) -> Result<ModelResponse, ProviderError> {
        if prompt.text.is_empty() {
            return Err(ProviderError::new(ProviderErrorKind::Malformed, "empty prompt"));
        }
        let body = request_body(spec, prompt);
        let started = Instant::now();
        let (reply, attempts) = with_retries(&self.policy, self.sleeper.as_ref(), |_| {
            let reply = self.attempt(spec, &body)?;
            let parsed = parse_reply(&reply)?;
            Ok(parsed)
        })?;
        let (text, finish_reason, prompt_tokens, completion_tokens) = reply;
        if finish_reason == FinishReason::Length {
            tracing::warn!(question = %prompt.question_id, order = %prompt.order, "completion truncated at max_tokens");
        }
        Ok(ModelResponse {
            text,
            finish_reason,
            prompt_tokens,
            completion_tokens,
            latency_ms: started.elapsed().as_millis() as u64,
            from_cache: false,
            request_fingerprint: request_fingerprint(spec, prompt),
            attempts,
        })
    }
}
