//! Model adjudication: deterministic requests, retries, response validation
//! and the audit trail.

mod backend;
mod live;
mod mock;
mod validate;

use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use crate::prompt::{PromptBundle, PromptMode};

pub use backend::{
    send, Backend, BackendError, BackendReply, BackendRequest, RetryPolicy, SendFailure, Sent, TokenUsage,
};
pub use live::{interpret_response, request_body, LiveBackend};
pub use mock::{MockBackend, MockScript, ScriptAction, ScriptEntry, ScriptedError, MOCK_TIMESTAMP};
pub use validate::{validate_response, Confidence, ValidResponse, ValidationError, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjudication {
    pub finding_id: String,
    pub mode: PromptMode,
    pub verdict: Verdict,
    pub confidence: Confidence,
    pub reasoning: String,
    pub salvaged: bool,
    pub raw_response: String,
    pub latency_ms: u64,
    pub attempt_count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureDetail {
    /// Backend or validation error kind, e.g. `CONTEXT_OVERFLOW`, `BAD_ENUM`.
    pub kind: String,
    pub detail: String,
}

/// Placeholder for a finding that produced no validated verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unevaluated {
    pub finding_id: String,
    pub mode: PromptMode,
    pub error: FailureDetail,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
    pub attempt_count: u32,
}

/// One line of `adjudications.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AdjudicationRecord {
    Evaluated(Adjudication),
    Unevaluated(Unevaluated),
}

impl AdjudicationRecord {
    pub fn finding_id(&self) -> &str {
        match self {
            AdjudicationRecord::Evaluated(a) => &a.finding_id,
            AdjudicationRecord::Unevaluated(u) => &u.finding_id,
        }
    }

    pub fn mode(&self) -> PromptMode {
        match self {
            AdjudicationRecord::Evaluated(a) => a.mode,
            AdjudicationRecord::Unevaluated(u) => u.mode,
        }
    }

    pub fn verdict(&self) -> Option<Verdict> {
        match self {
            AdjudicationRecord::Evaluated(a) => Some(a.verdict),
            AdjudicationRecord::Unevaluated(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub finding_id: String,
    pub mode: PromptMode,
    pub model: String,
    pub prompt_sha256: String,
    pub requested_at: String,
    pub attempt_count: u32,
    pub latency_ms: u64,
    pub raw_response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<TokenUsage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed: Option<ValidResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<FailureDetail>,
}

impl AuditRecord {
    pub fn file_name(&self) -> String {
        format!("{}.{}.json", self.finding_id, self.mode.file_tag())
    }
}

/// Destination for audit records. Calls arrive from a single thread.
pub trait AuditSink {
    fn append(&mut self, record: &AuditRecord) -> io::Result<()>;
}

/// Writes `audit/<finding_id>.<mode>.json`, one file per record.
pub struct DirAuditSink {
    dir: PathBuf,
}

impl DirAuditSink {
    pub fn create(dir: &Path) -> io::Result<DirAuditSink> {
        std::fs::create_dir_all(dir)?;
        Ok(DirAuditSink { dir: dir.to_path_buf() })
    }
}

impl AuditSink for DirAuditSink {
    fn append(&mut self, record: &AuditRecord) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(record).map_err(io::Error::other)?;
        text.push('\n');
        std::fs::write(self.dir.join(record.file_name()), text)
    }
}

impl AuditSink for Vec<AuditRecord> {
    fn append(&mut self, record: &AuditRecord) -> io::Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjudicateOptions {
    pub parallelism: usize,
    pub retry: RetryPolicy,
    pub max_output_chars: u32,
}

impl Default for AdjudicateOptions {
    fn default() -> Self {
        AdjudicateOptions { parallelism: 1, retry: RetryPolicy::default(), max_output_chars: 16_384 }
    }
}

/// Sends one bundle and validates the reply.
pub fn adjudicate_one(
    bundle: &PromptBundle,
    backend: &dyn Backend,
    opts: &AdjudicateOptions,
) -> (AdjudicationRecord, AuditRecord) {
    let request = BackendRequest::new(bundle, backend.model(), opts.max_output_chars);
    let mut audit = AuditRecord {
        finding_id: bundle.finding_id.clone(),
        mode: bundle.mode,
        model: backend.model().to_string(),
        prompt_sha256: bundle.prompt_sha256.clone(),
        requested_at: backend.timestamp(),
        attempt_count: 0,
        latency_ms: 0,
        raw_response: None,
        usage: None,
        parsed: None,
        error: None,
    };
    let unevaluated = |error: FailureDetail, raw: Option<String>, attempts: u32| {
        AdjudicationRecord::Unevaluated(Unevaluated {
            finding_id: bundle.finding_id.clone(),
            mode: bundle.mode,
            error,
            raw_response: raw,
            attempt_count: attempts,
        })
    };
    let sent = match send(&request, backend, &opts.retry) {
        Ok(sent) => sent,
        Err(SendFailure { error, attempts }) => {
            let detail = FailureDetail { kind: error.kind().to_string(), detail: error.to_string() };
            log::warn!("{} ({}): {}", bundle.finding_id, bundle.mode, detail.detail);
            audit.attempt_count = attempts;
            audit.error = Some(detail.clone());
            return (unevaluated(detail, None, attempts), audit);
        }
    };
    audit.attempt_count = sent.attempts;
    audit.latency_ms = sent.latency_ms;
    audit.usage = sent.usage;
    audit.raw_response = Some(sent.content.clone());
    match validate_response(&sent.content) {
        Ok(valid) => {
            audit.parsed = Some(valid.clone());
            let adj = Adjudication {
                finding_id: bundle.finding_id.clone(),
                mode: bundle.mode,
                verdict: valid.verdict,
                confidence: valid.confidence,
                reasoning: valid.reasoning,
                salvaged: valid.salvaged,
                raw_response: sent.content,
                latency_ms: sent.latency_ms,
                attempt_count: sent.attempts,
            };
            (AdjudicationRecord::Evaluated(adj), audit)
        }
        Err(e) => {
            let detail = FailureDetail { kind: e.kind().to_string(), detail: e.to_string() };
            log::warn!("{} ({}): invalid response: {e}", bundle.finding_id, bundle.mode);
            audit.error = Some(detail.clone());
            (unevaluated(detail, Some(sent.content), sent.attempts), audit)
        }
    }
}

/// Adjudicates every bundle exactly once with at most `opts.parallelism`
/// requests in flight. Results come back in input order; audit records are
/// handed to `sink` from the calling thread as they complete. Only a failing
/// sink aborts the batch.
pub fn adjudicate_all(
    bundles: &[PromptBundle],
    backend: &dyn Backend,
    opts: &AdjudicateOptions,
    sink: &mut dyn AuditSink,
) -> io::Result<Vec<AdjudicationRecord>> {
    let workers = opts.parallelism.max(1).min(bundles.len().max(1));
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<AdjudicationRecord>> = vec![None; bundles.len()];
    let (tx, rx) = mpsc::channel::<(usize, AdjudicationRecord, AuditRecord)>();

    std::thread::scope(|scope| -> io::Result<()> {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(bundle) = bundles.get(i) else { break };
                let (record, audit) = adjudicate_one(bundle, backend, opts);
                if tx.send((i, record, audit)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, record, audit) in rx.iter() {
            if let Err(e) = sink.append(&audit) {
                // Stop handing out work; in-flight requests finish and are dropped.
                next.store(bundles.len(), Ordering::SeqCst);
                return Err(e);
            }
            slots[i] = Some(record);
        }
        Ok(())
    })?;

    Ok(slots.into_iter().map(|s| s.expect("every bundle is adjudicated once")).collect())
}
