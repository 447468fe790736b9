use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::backend::{Backend, BackendError, BackendReply, BackendRequest};
use crate::prompt::prompt_hash;

pub const MOCK_TIMESTAMP: &str = "2000-01-01T00:00:00.000Z";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedError {
    Transport,
    RateLimited,
    ContextOverflow,
}

/// One scripted attempt outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptAction {
    Text(String),
    Reply { reply: String },
    Error { error: ScriptedError },
}

/// A single action, or a sequence consumed one per attempt (the last entry
/// repeats).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptEntry {
    Sequence(Vec<ScriptAction>),
    Single(ScriptAction),
}

impl ScriptEntry {
    fn action(&self, attempt: usize) -> Option<&ScriptAction> {
        match self {
            ScriptEntry::Single(a) => Some(a),
            ScriptEntry::Sequence(v) => v.get(attempt).or(v.last()),
        }
    }
}

fn default_model() -> String {
    "mock".to_string()
}

fn default_limit() -> usize {
    32_768
}

/// Canned responses keyed by `<finding_id>.<mode>`, `<finding_id>` or prompt
/// hash, looked up in that order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_limit")]
    pub context_limit_chars: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<ScriptEntry>,
    #[serde(default)]
    pub responses: BTreeMap<String, ScriptEntry>,
}

impl Default for MockScript {
    fn default() -> Self {
        MockScript {
            model: default_model(),
            context_limit_chars: default_limit(),
            default: None,
            responses: BTreeMap::new(),
        }
    }
}

impl MockScript {
    pub fn load(path: &Path) -> std::io::Result<MockScript> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))
    }

    pub fn reply(&mut self, key: impl Into<String>, reply: impl Into<String>) -> &mut Self {
        self.responses.insert(key.into(), ScriptEntry::Single(ScriptAction::Reply { reply: reply.into() }));
        self
    }
}

/// Deterministic offline backend. Latency is always zero, the timestamp is
/// fixed and backoff pauses return immediately.
#[derive(Debug)]
pub struct MockBackend {
    script: MockScript,
    attempts: Mutex<HashMap<String, usize>>,
}

impl MockBackend {
    pub fn new(script: MockScript) -> MockBackend {
        MockBackend { script, attempts: Mutex::new(HashMap::new()) }
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    fn lookup(&self, req: &BackendRequest) -> Option<(&str, &ScriptEntry)> {
        let keys = [
            format!("{}.{}", req.finding_id, req.mode.file_tag()),
            req.finding_id.clone(),
            prompt_hash(&req.system_text, &req.user_text),
        ];
        for key in keys {
            if let Some((k, e)) = self.script.responses.get_key_value(&key) {
                return Some((k.as_str(), e));
            }
        }
        self.script.default.as_ref().map(|e| ("", e))
    }
}

impl Backend for MockBackend {
    fn model(&self) -> &str {
        &self.script.model
    }

    fn complete(&self, req: &BackendRequest) -> Result<BackendReply, BackendError> {
        let prompt_chars = req.prompt_chars();
        if prompt_chars > self.script.context_limit_chars {
            return Err(BackendError::ContextOverflow {
                prompt_chars,
                detail: format!("mock limit is {} chars", self.script.context_limit_chars),
            });
        }
        let Some((key, entry)) = self.lookup(req) else {
            return Err(BackendError::Transport { detail: format!("no scripted response for {}", req.finding_id) });
        };
        let attempt = {
            let mut seen = self.attempts.lock().expect("mock state poisoned");
            let slot = seen.entry(format!("{key}\u{0}{}.{}", req.finding_id, req.mode.file_tag())).or_insert(0);
            *slot += 1;
            *slot - 1
        };
        match entry.action(attempt) {
            Some(ScriptAction::Text(reply)) | Some(ScriptAction::Reply { reply }) => {
                Ok(BackendReply { content: reply.clone(), latency_ms: 0, usage: None })
            }
            Some(ScriptAction::Error { error }) => Err(match error {
                ScriptedError::Transport => BackendError::Transport { detail: "scripted transport failure".into() },
                ScriptedError::RateLimited => BackendError::RateLimited { retry_after_ms: None },
                ScriptedError::ContextOverflow => {
                    BackendError::ContextOverflow { prompt_chars, detail: "scripted overflow".into() }
                }
            }),
            None => Err(BackendError::Transport { detail: "empty scripted sequence".into() }),
        }
    }

    fn timestamp(&self) -> String {
        MOCK_TIMESTAMP.to_string()
    }

    fn pause(&self, _delay: Duration) {}
}
