use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::backend::{Backend, BackendError, BackendReply, BackendRequest, TokenUsage};

/// Chat-completions client over blocking HTTP with a bearer token.
pub struct LiveBackend {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

impl LiveBackend {
    /// `api_key_env` names the environment variable holding the key; a
    /// missing variable sends no Authorization header.
    pub fn new(endpoint: &str, model: &str, api_key_env: &str, timeout: Duration) -> LiveBackend {
        let config = ureq::Agent::config_builder().http_status_as_error(false).timeout_global(Some(timeout)).build();
        LiveBackend {
            agent: config.into(),
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key: std::env::var(api_key_env).ok().filter(|k| !k.is_empty()),
        }
    }
}

/// Rough characters-per-token ratio for turning a character cap into a token cap.
const CHARS_PER_TOKEN: u32 = 4;

pub fn request_body(req: &BackendRequest) -> Value {
    json!({
        "model": req.model,
        "messages": [
            {"role": "system", "content": req.system_text},
            {"role": "user", "content": req.user_text},
        ],
        "temperature": req.temperature(),
        "max_tokens": req.max_output_chars.div_ceil(CHARS_PER_TOKEN).max(1),
    })
}

fn mentions_context_limit(body: &str) -> bool {
    let b = body.to_ascii_lowercase();
    ["context_length", "context length", "maximum context", "context window", "too many tokens", "prompt is too long"]
        .iter()
        .any(|p| b.contains(p))
}

/// Maps an HTTP status and body to the reply content and token usage, or a
/// backend error.
pub fn interpret_response(
    status: u16,
    retry_after: Option<&str>,
    body: &str,
    prompt_chars: usize,
) -> Result<(String, Option<TokenUsage>), BackendError> {
    match status {
        200..=299 => {
            let v: Value = serde_json::from_str(body)
                .map_err(|e| BackendError::Transport { detail: format!("unreadable response body: {e}") })?;
            let content =
                v.pointer("/choices/0/message/content").and_then(Value::as_str).map(str::to_string).ok_or_else(
                    || BackendError::Transport { detail: "response has no choices[0].message.content".into() },
                )?;
            let usage = v.get("usage").map(|u| TokenUsage {
                prompt_tokens: u.get("prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
                completion_tokens: u.get("completion_tokens").and_then(Value::as_u64).unwrap_or(0),
            });
            Ok((content, usage))
        }
        429 => Err(BackendError::RateLimited {
            retry_after_ms: retry_after.and_then(|s| s.trim().parse::<f64>().ok()).map(|secs| (secs * 1000.0) as u64),
        }),
        400 | 413 if status == 413 || mentions_context_limit(body) => {
            Err(BackendError::ContextOverflow { prompt_chars, detail: format!("HTTP {status}") })
        }
        500..=599 => Err(BackendError::Transport { detail: format!("HTTP {status}") }),
        _ => Err(BackendError::Transport {
            detail: format!("HTTP {status}: {}", body.chars().take(300).collect::<String>()),
        }),
    }
}

impl Backend for LiveBackend {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, req: &BackendRequest) -> Result<BackendReply, BackendError> {
        let body = request_body(req).to_string();
        let started = Instant::now();
        let mut call = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call.send(&body).map_err(|e| BackendError::Transport { detail: e.to_string() })?;
        let status = resp.status().as_u16();
        let retry_after = resp.headers().get("retry-after").and_then(|v| v.to_str().ok()).map(str::to_string);
        let text = resp.body_mut().read_to_string().map_err(|e| BackendError::Transport { detail: e.to_string() })?;
        let (content, usage) = interpret_response(status, retry_after.as_deref(), &text, req.prompt_chars())?;
        Ok(BackendReply { content, usage, latency_ms: started.elapsed().as_millis() as u64 })
    }
}
