use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{PromptBundle, PromptMode};

/// One chat-completion request. Sampling temperature is always zero; the
/// field is private so it cannot be set to anything else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub finding_id: String,
    pub mode: PromptMode,
    pub model: String,
    pub system_text: String,
    pub user_text: String,
    pub max_output_chars: u32,
    #[serde(skip_deserializing)]
    temperature: f64,
}

impl BackendRequest {
    pub fn new(bundle: &PromptBundle, model: &str, max_output_chars: u32) -> BackendRequest {
        BackendRequest {
            finding_id: bundle.finding_id.clone(),
            mode: bundle.mode,
            model: model.to_string(),
            system_text: bundle.system_text.clone(),
            user_text: bundle.user_text.clone(),
            max_output_chars,
            temperature: 0.0,
        }
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn prompt_chars(&self) -> usize {
        self.system_text.chars().count() + self.user_text.chars().count()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendReply {
    pub content: String,
    pub latency_ms: u64,
    pub usage: Option<TokenUsage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BackendError {
    #[error("transport error: {detail}")]
    Transport { detail: String },
    #[error("rate limited")]
    RateLimited { retry_after_ms: Option<u64> },
    #[error("prompt of {prompt_chars} chars exceeds the model context ({detail})")]
    ContextOverflow { prompt_chars: usize, detail: String },
    #[error("gave up after {attempts} attempts; last error: {last}")]
    Exhausted { attempts: u32, last: Box<BackendError> },
}

impl BackendError {
    pub fn kind(&self) -> &'static str {
        match self {
            BackendError::Transport { .. } => "TRANSPORT",
            BackendError::RateLimited { .. } => "RATE_LIMITED",
            BackendError::ContextOverflow { .. } => "CONTEXT_OVERFLOW",
            BackendError::Exhausted { .. } => "EXHAUSTED",
        }
    }

    fn retryable(&self) -> bool {
        matches!(self, BackendError::Transport { .. } | BackendError::RateLimited { .. })
    }
}

/// A chat-completion provider.
pub trait Backend: Sync {
    fn model(&self) -> &str;

    /// One attempt, no retries.
    fn complete(&self, request: &BackendRequest) -> Result<BackendReply, BackendError>;

    /// Timestamp recorded in audit records.
    fn timestamp(&self) -> String {
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
    }

    /// Waits between attempts.
    fn pause(&self, delay: Duration) {
        std::thread::sleep(delay);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 4, backoff_base_ms: 1000, backoff_max_ms: 30_000 }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, given that `attempt` (1-based) failed.
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor).min(self.backoff_max_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sent {
    pub content: String,
    pub latency_ms: u64,
    pub usage: Option<TokenUsage>,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SendFailure {
    pub error: BackendError,
    pub attempts: u32,
}

/// Sends `request`, retrying transport errors and rate limits with
/// exponential backoff until `policy.max_attempts` is reached.
pub fn send(request: &BackendRequest, backend: &dyn Backend, policy: &RetryPolicy) -> Result<Sent, SendFailure> {
    let max = policy.max_attempts.max(1);
    let mut attempts = 0;
    loop {
        attempts += 1;
        match backend.complete(request) {
            Ok(reply) => {
                return Ok(Sent { content: reply.content, latency_ms: reply.latency_ms, usage: reply.usage, attempts })
            }
            Err(e) if e.retryable() && attempts < max => {
                let mut delay = policy.delay(attempts);
                if let BackendError::RateLimited { retry_after_ms: Some(ms) } = e {
                    delay = delay.max(Duration::from_millis(ms.min(policy.backoff_max_ms)));
                }
                log::debug!("{} attempt {attempts} failed ({e}); retrying in {delay:?}", request.finding_id);
                backend.pause(delay);
            }
            Err(e) if e.retryable() => {
                return Err(SendFailure { error: BackendError::Exhausted { attempts, last: Box::new(e) }, attempts })
            }
            Err(e) => return Err(SendFailure { error: e, attempts }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy { max_attempts: 10, backoff_base_ms: 100, backoff_max_ms: 1000 };
        let ms: Vec<u128> = (1..=6).map(|a| p.delay(a).as_millis()).collect();
        assert_eq!(ms, vec![100, 200, 400, 800, 1000, 1000]);
        assert_eq!(p.delay(200).as_millis(), 1000);
    }
}
