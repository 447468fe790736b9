//! SARIF 2.1.0 ingestion.
//!
//! Parses an analyzer's SARIF log and canonicalizes every result into a
//! [`Finding`]: rule and CWE identifiers, the diagnostic message, the primary
//! location and the ordered source-to-sink trace from the first thread flow.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Sentinel used when no CWE can be resolved for a rule.
pub const CWE_UNKNOWN: &str = "CWE-UNKNOWN";

#[derive(Debug, Error)]
pub enum SarifError {
    #[error("malformed JSON: {0}")]
    MalformedJson(#[source] serde_json::Error),
    #[error("not a SARIF log: {0}")]
    NotSarif(String),
    #[error("run {run}, result {result}: {reason}")]
    InvalidResult { run: usize, result: usize, reason: String },
}

/// 1-based source region inside a file.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CodeLocation {
    pub uri: String,
    pub start_line: u32,
    pub end_line: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_column: Option<u32>,
    /// Exclusive, as in SARIF regions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_column: Option<u32>,
}

impl CodeLocation {
    pub fn line(uri: impl Into<String>, line: u32) -> Self {
        CodeLocation { uri: uri.into(), start_line: line, end_line: line, start_column: None, end_column: None }
    }
}

impl fmt::Display for CodeLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.uri, self.start_line)?;
        if self.end_line != self.start_line {
            write!(f, "-{}", self.end_line)?;
        }
        if let Some(col) = self.start_column {
            write!(f, ":{col}")?;
            if let Some(end) = self.end_column {
                write!(f, "-{end}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StepKind {
    Source,
    Step,
    Sink,
}

impl StepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::Source => "SOURCE",
            StepKind::Step => "STEP",
            StepKind::Sink => "SINK",
        }
    }

    /// Kind of the step at 1-based `index` in a trace of `len` steps. A
    /// single-step trace is a bare source.
    pub fn for_position(index: usize, len: usize) -> StepKind {
        if index == 1 {
            StepKind::Source
        } else if index == len {
            StepKind::Sink
        } else {
            StepKind::Step
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub index: u32,
    pub kind: StepKind,
    pub location: CodeLocation,
    pub step_message: String,
}

/// One canonicalized alert. Field order is the `findings.jsonl` key order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub finding_id: String,
    pub origin_index: u32,
    pub rule_id: String,
    pub cwe_id: String,
    pub message: String,
    pub primary_location: CodeLocation,
    pub trace: Vec<TraceStep>,
    /// Code flows beyond the first one, which are not adjudicated.
    #[serde(default)]
    pub extra_flow_count: u32,
}

// ---------------------------------------------------------------------------
// Raw SARIF model. Only the paths the pipeline reads are modelled; everything
// else is ignored.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
pub struct SarifDocument {
    pub version: String,
    pub runs: Vec<Run>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Run {
    #[serde(default)]
    pub tool: Tool,
    #[serde(default)]
    pub results: Vec<SarifResult>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct Tool {
    #[serde(default)]
    pub driver: ToolComponent,
    #[serde(default)]
    pub extensions: Vec<ToolComponent>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct ToolComponent {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub rules: Vec<ReportingDescriptor>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct ReportingDescriptor {
    pub id: String,
    #[serde(default)]
    pub properties: PropertyBag,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct PropertyBag {
    #[serde(default)]
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SarifResult {
    pub rule_id: Option<String>,
    pub rule_index: Option<usize>,
    pub rule: Option<RuleReference>,
    #[serde(default)]
    pub message: Message,
    #[serde(default)]
    pub locations: Vec<Location>,
    #[serde(default)]
    pub code_flows: Vec<CodeFlow>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct RuleReference {
    pub id: Option<String>,
    pub index: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct Message {
    #[serde(default)]
    pub text: String,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Location {
    pub physical_location: Option<PhysicalLocation>,
    pub message: Option<Message>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PhysicalLocation {
    pub artifact_location: Option<ArtifactLocation>,
    pub region: Option<Region>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct ArtifactLocation {
    pub uri: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Region {
    pub start_line: Option<u32>,
    pub end_line: Option<u32>,
    pub start_column: Option<u32>,
    pub end_column: Option<u32>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CodeFlow {
    #[serde(default)]
    pub thread_flows: Vec<ThreadFlow>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct ThreadFlow {
    #[serde(default)]
    pub locations: Vec<ThreadFlowLocation>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct ThreadFlowLocation {
    pub location: Option<Location>,
}

impl SarifResult {
    fn effective_rule_id(&self) -> Option<&str> {
        self.rule_id.as_deref().or_else(|| self.rule.as_ref().and_then(|r| r.id.as_deref()))
    }
}

impl SarifDocument {
    pub fn result_count(&self) -> usize {
        self.runs.iter().map(|r| r.results.len()).sum()
    }

    pub fn results(&self) -> impl Iterator<Item = (&Run, &SarifResult)> {
        self.runs.iter().flat_map(|run| run.results.iter().map(move |res| (run, res)))
    }
}

/// Parses a SARIF log. Syntax errors, a missing `runs` array and results that
/// break the ruleId/location invariants are reported as distinct errors.
pub fn parse_sarif(raw: &[u8]) -> Result<SarifDocument, SarifError> {
    let value: Value = serde_json::from_slice(raw).map_err(SarifError::MalformedJson)?;
    let obj = value.as_object().ok_or_else(|| SarifError::NotSarif("top-level value is not an object".into()))?;
    match obj.get("runs") {
        Some(Value::Array(_)) => {}
        Some(_) => return Err(SarifError::NotSarif("`runs` is not an array".into())),
        None => return Err(SarifError::NotSarif("missing `runs` array".into())),
    }
    if !matches!(obj.get("version"), Some(Value::String(_))) {
        return Err(SarifError::NotSarif("missing `version` string".into()));
    }

    let doc: SarifDocument =
        serde_json::from_value(value).map_err(|e| SarifError::NotSarif(format!("unexpected structure: {e}")))?;

    for (run_idx, run) in doc.runs.iter().enumerate() {
        for (res_idx, res) in run.results.iter().enumerate() {
            let invalid =
                |reason: &str| SarifError::InvalidResult { run: run_idx, result: res_idx, reason: reason.to_string() };
            if res.effective_rule_id().is_none() {
                return Err(invalid("missing ruleId"));
            }
            let Some(first) = res.locations.first() else {
                return Err(invalid("no locations"));
            };
            if to_code_location(first).is_none() {
                return Err(invalid("primary location lacks artifactLocation.uri or region.startLine"));
            }
        }
    }
    Ok(doc)
}

fn to_code_location(loc: &Location) -> Option<CodeLocation> {
    let phys = loc.physical_location.as_ref()?;
    let uri = phys.artifact_location.as_ref()?.uri.clone()?;
    let region = phys.region.as_ref()?;
    let start_line = region.start_line?.max(1);
    let end_line = region.end_line.unwrap_or(start_line).max(start_line);
    Some(CodeLocation { uri, start_line, end_line, start_column: region.start_column, end_column: region.end_column })
}

/// Normalizes the many spellings of a CWE reference (`external/cwe/cwe-89`,
/// `CWE-89`, `cwe89`) to `CWE-NNN`, zero-padded to at least three digits.
pub fn normalize_cwe(raw: &str) -> Option<String> {
    let lower = raw.trim().to_ascii_lowercase();
    let tail = lower.rsplit('/').next().unwrap_or(&lower);
    let digits = tail.strip_prefix("cwe").map(|t| t.trim_start_matches(['-', '_', ' '])).unwrap_or(tail);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let n: u32 = digits.parse().ok()?;
    Some(format!("CWE-{n:03}"))
}

fn rule_descriptor<'a>(run: &'a Run, res: &SarifResult) -> Option<&'a ReportingDescriptor> {
    let id = res.effective_rule_id()?;
    let all_rules = || run.tool.driver.rules.iter().chain(run.tool.extensions.iter().flat_map(|e| e.rules.iter()));
    if let Some(found) = all_rules().find(|r| r.id == id) {
        return Some(found);
    }
    let index = res.rule_index.or_else(|| res.rule.as_ref()?.index)?;
    run.tool.driver.rules.get(index).filter(|r| r.id == id)
}

fn resolve_cwe(run: &Run, res: &SarifResult, cwe_map: &BTreeMap<String, String>) -> String {
    let rule_id = res.effective_rule_id().unwrap_or_default();
    let from_tags = rule_descriptor(run, res).and_then(|rule| {
        rule.properties.tags.iter().filter(|t| t.to_ascii_lowercase().contains("cwe")).find_map(|t| normalize_cwe(t))
    });
    from_tags.or_else(|| cwe_map.get(rule_id).and_then(|c| normalize_cwe(c))).unwrap_or_else(|| CWE_UNKNOWN.to_string())
}

/// Turns every SARIF result into a [`Finding`], in file order. Never drops a
/// result; an unresolvable CWE degrades to [`CWE_UNKNOWN`].
pub fn canonicalize(doc: &SarifDocument, cwe_map: &BTreeMap<String, String>) -> Vec<Finding> {
    doc.results()
        .enumerate()
        .map(|(origin, (run, res))| {
            let primary_location =
                res.locations.first().and_then(to_code_location).expect("parse_sarif validated the primary location");

            let (trace, extra_flow_count) = match res.code_flows.first() {
                Some(flow) => {
                    let extra_threads = flow.thread_flows.len().saturating_sub(1);
                    let extra = res.code_flows.len() - 1 + extra_threads;
                    (build_trace(flow), extra as u32)
                }
                None => (Vec::new(), 0),
            };

            let mut finding = Finding {
                finding_id: String::new(),
                origin_index: origin as u32,
                rule_id: res.effective_rule_id().unwrap_or_default().to_string(),
                cwe_id: resolve_cwe(run, res, cwe_map),
                message: res.message.text.clone(),
                primary_location,
                trace,
                extra_flow_count,
            };
            finding.finding_id = finding_id(&finding);
            finding
        })
        .collect()
}

fn build_trace(flow: &CodeFlow) -> Vec<TraceStep> {
    let Some(thread) = flow.thread_flows.first() else {
        return Vec::new();
    };
    // Thread-flow entries without a physical location carry no code evidence.
    let located: Vec<(CodeLocation, String)> = thread
        .locations
        .iter()
        .filter_map(|tfl| {
            let loc = tfl.location.as_ref()?;
            let code = to_code_location(loc)?;
            let msg = loc.message.as_ref().map(|m| m.text.clone()).unwrap_or_default();
            Some((code, msg))
        })
        .collect();
    let len = located.len();
    located
        .into_iter()
        .enumerate()
        .map(|(i, (location, step_message))| TraceStep {
            index: i as u32 + 1,
            kind: StepKind::for_position(i + 1, len),
            location,
            step_message,
        })
        .collect()
}

#[derive(Serialize)]
struct IdentityKey<'a> {
    rule_id: &'a str,
    primary_location: &'a CodeLocation,
    trace: Vec<&'a CodeLocation>,
    origin_index: u32,
}

/// Lowercase hex SHA-256 over the canonical JSON of the identity fields:
/// rule id, primary location, ordered trace locations and origin index.
pub fn finding_id(f: &Finding) -> String {
    let key = IdentityKey {
        rule_id: &f.rule_id,
        primary_location: &f.primary_location,
        trace: f.trace.iter().map(|s| &s.location).collect(),
        origin_index: f.origin_index,
    };
    let canonical = serde_json::to_vec(&key).expect("identity key serializes");
    hex::encode(Sha256::digest(&canonical))
}
