use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::locator::MethodRecord;
use super::source::{SourceFile, SourceTree};
use crate::sarif::{CodeLocation, Finding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextLimits {
    pub max_total_lines: u32,
    pub max_intermediate_lines: u32,
    pub elide_keep_head: u32,
    pub elide_keep_tail: u32,
}

impl Default for ContextLimits {
    fn default() -> Self {
        ContextLimits { max_total_lines: 400, max_intermediate_lines: 60, elide_keep_head: 20, elide_keep_tail: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SegmentReason {
    StepLine,
    Intermediate,
    MethodSignature,
    CallSite,
    /// Baseline: fixed window around a step.
    Window,
    /// Baseline: an entire file.
    WholeFile,
}

impl SegmentReason {
    pub fn as_str(self) -> &'static str {
        match self {
            SegmentReason::StepLine => "STEP_LINE",
            SegmentReason::Intermediate => "INTERMEDIATE",
            SegmentReason::MethodSignature => "METHOD_SIGNATURE",
            SegmentReason::CallSite => "CALL_SITE",
            SegmentReason::Window => "WINDOW",
            SegmentReason::WholeFile => "WHOLE_FILE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSegment {
    pub file: String,
    pub start_line: u32,
    pub end_line: u32,
    pub reason: SegmentReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_index: Option<u32>,
    /// Signature of the enclosing method, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    /// Number of source lines omitted directly after this segment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elided_after: Option<u32>,
    pub text: String,
}

impl ContextSegment {
    pub fn line_count(&self) -> u32 {
        self.end_line - self.start_line + 1
    }

    pub fn covers(&self, file: &str, line: u32) -> bool {
        self.file == file && self.start_line <= line && line <= self.end_line
    }

    /// Source text of `line`, if this segment holds it.
    pub fn source_line(&self, line: u32) -> Option<&str> {
        if line < self.start_line || line > self.end_line {
            return None;
        }
        self.text.split('\n').nth((line - self.start_line) as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ContextIssue {
    MissingFile {
        file: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step_index: Option<u32>,
    },
    LineOutOfRange {
        file: String,
        line: u32,
        file_lines: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step_index: Option<u32>,
    },
    UnbalancedBraces {
        file: String,
        depth: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ContextStrategy {
    DataflowSlice,
    Window5,
    WholeFile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BaselineStyle {
    Window5,
    WholeFile,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeContext {
    pub finding_id: String,
    pub strategy: ContextStrategy,
    pub segments: Vec<ContextSegment>,
    pub truncated: bool,
    pub total_lines: u32,
    /// Set when some step could not be resolved to source text.
    pub partial: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub issues: Vec<ContextIssue>,
}

impl CodeContext {
    /// Source text of `file:line` taken from any segment that covers it.
    pub fn source_line(&self, file: &str, line: u32) -> Option<&str> {
        self.segments.iter().filter(|s| s.file == file).find_map(|s| s.source_line(line))
    }
}

struct ResolvedStep {
    index: Option<u32>,
    loc: CodeLocation,
    file: Arc<SourceFile>,
}

impl ResolvedStep {
    fn method(&self) -> Option<&MethodRecord> {
        self.file.methods.enclosing(self.loc.start_line)
    }
}

/// Steps of the finding as (index, location); a finding without a trace is
/// represented by its primary location alone.
fn step_locations(f: &Finding) -> Vec<(Option<u32>, CodeLocation)> {
    if f.trace.is_empty() {
        vec![(None, f.primary_location.clone())]
    } else {
        f.trace.iter().map(|s| (Some(s.index), s.location.clone())).collect()
    }
}

fn resolve_steps(f: &Finding, tree: &SourceTree, issues: &mut Vec<ContextIssue>) -> Vec<Option<ResolvedStep>> {
    let mut reported_braces = Vec::<String>::new();
    step_locations(f)
        .into_iter()
        .map(|(index, mut loc)| {
            let Some(file) = tree.get(&loc.uri) else {
                issues.push(ContextIssue::MissingFile { file: loc.uri.clone(), step_index: index });
                return None;
            };
            if let Some(err) = &file.methods.unbalanced {
                if !reported_braces.contains(&loc.uri) {
                    reported_braces.push(loc.uri.clone());
                    issues.push(ContextIssue::UnbalancedBraces { file: loc.uri.clone(), depth: err.depth });
                }
            }
            if loc.start_line > file.line_count() {
                issues.push(ContextIssue::LineOutOfRange {
                    file: loc.uri.clone(),
                    line: loc.start_line,
                    file_lines: file.line_count(),
                    step_index: index,
                });
                return None;
            }
            loc.end_line = loc.end_line.clamp(loc.start_line, file.line_count());
            Some(ResolvedStep { index, loc, file })
        })
        .collect()
}

fn segment(file: &SourceFile, start: u32, end: u32, reason: SegmentReason, step_index: Option<u32>) -> ContextSegment {
    let method = file.methods.enclosing(start).map(|m| m.signature_line.clone());
    ContextSegment {
        file: file.uri.clone(),
        start_line: start,
        end_line: end,
        reason,
        step_index,
        method,
        elided_after: None,
        text: file.slice(start, end),
    }
}

fn signature_segment(file: &SourceFile, m: &MethodRecord, step: Option<u32>) -> ContextSegment {
    segment(file, m.start_line, m.body_start_line, SegmentReason::MethodSignature, step)
}

fn calls_name(line: &str, name: &str) -> bool {
    let mut from = 0;
    while let Some(pos) = line[from..].find(name) {
        let at = from + pos;
        let before_ok = line[..at].chars().next_back().is_none_or(|c| !(c.is_alphanumeric() || c == '_' || c == '$'));
        let after = line[at + name.len()..].trim_start();
        if before_ok && after.starts_with('(') {
            return true;
        }
        from = at + name.len();
    }
    false
}

/// Line in `caller` (within `range`, scanned in the given order) that calls
/// `callee`.
fn find_call_site(file: &SourceFile, callee: &str, lines: impl Iterator<Item = u32>) -> Option<u32> {
    lines.filter_map(|n| file.line(n).map(|text| (n, text))).find(|(_, text)| calls_name(text, callee)).map(|(n, _)| n)
}

/// Segments linking step `a` to the following step `b`.
fn link_segments(a: &ResolvedStep, b: &ResolvedStep, limits: &ContextLimits) -> Vec<ContextSegment> {
    let (ma, mb) = (a.method(), b.method());
    let same_file = a.loc.uri == b.loc.uri;

    if same_file && ma.is_some() && ma == mb {
        let (lo, hi) = if a.loc.end_line < b.loc.start_line {
            (a.loc.end_line + 1, b.loc.start_line - 1)
        } else if b.loc.end_line < a.loc.start_line {
            (b.loc.end_line + 1, a.loc.start_line - 1)
        } else {
            return Vec::new();
        };
        if lo > hi {
            return Vec::new();
        }
        return intermediate(&a.file, lo, hi, a.index, limits);
    }
    if same_file && ma.is_none() && mb.is_none() {
        return Vec::new();
    }

    let mut out = Vec::new();
    if let Some(m) = ma {
        out.push(signature_segment(&a.file, m, a.index));
    }
    let (Some(ma), Some(mb)) = (ma, mb) else {
        if let Some(m) = mb {
            out.push(signature_segment(&b.file, m, b.index));
        }
        return out;
    };

    // Taint passed into the next method: the call follows step `a` in its method.
    let forward = find_call_site(&a.file, &mb.name, a.loc.start_line..=ma.end_line);
    if let Some(line) = forward {
        out.push(segment(&a.file, line, line, SegmentReason::CallSite, a.index));
        out.push(signature_segment(&b.file, mb, b.index));
        return out;
    }
    // Taint returned to the caller: the nearest call preceding step `b`.
    out.push(signature_segment(&b.file, mb, b.index));
    let backward = find_call_site(&b.file, &ma.name, (mb.body_start_line..=b.loc.start_line).rev());
    if let Some(line) = backward {
        out.push(segment(&b.file, line, line, SegmentReason::CallSite, b.index));
    }
    out
}

fn intermediate(file: &SourceFile, lo: u32, hi: u32, step: Option<u32>, limits: &ContextLimits) -> Vec<ContextSegment> {
    let len = hi - lo + 1;
    let keep = limits.elide_keep_head + limits.elide_keep_tail;
    if len <= limits.max_intermediate_lines || len <= keep || limits.elide_keep_head == 0 {
        return vec![segment(file, lo, hi, SegmentReason::Intermediate, step)];
    }
    let head_end = lo + limits.elide_keep_head - 1;
    let tail_start = hi + 1 - limits.elide_keep_tail;
    let mut head = segment(file, lo, head_end, SegmentReason::Intermediate, step);
    head.elided_after = Some(tail_start - head_end - 1);
    let mut out = vec![head];
    if limits.elide_keep_tail > 0 {
        out.push(segment(file, tail_start, hi, SegmentReason::Intermediate, step));
    }
    out
}

/// Drops repeated (file, start, end) ranges, keeping the first position. A
/// range that is also a step line keeps the STEP_LINE reason.
fn dedup(segments: Vec<ContextSegment>) -> Vec<ContextSegment> {
    let mut seen: std::collections::HashMap<(String, u32, u32), usize> = std::collections::HashMap::new();
    let mut out: Vec<ContextSegment> = Vec::with_capacity(segments.len());
    for seg in segments {
        let key = (seg.file.clone(), seg.start_line, seg.end_line);
        match seen.get(&key) {
            Some(&i) => {
                if seg.reason == SegmentReason::StepLine && out[i].reason != SegmentReason::StepLine {
                    out[i].reason = SegmentReason::StepLine;
                    out[i].step_index = seg.step_index;
                }
            }
            None => {
                seen.insert(key, out.len());
                out.push(seg);
            }
        }
    }
    out
}

/// Keeps every step line and fills the rest of the line budget in order.
fn apply_budget(segments: Vec<ContextSegment>, max_total: u32) -> (Vec<ContextSegment>, bool) {
    let step_lines: u32 =
        segments.iter().filter(|s| s.reason == SegmentReason::StepLine).map(ContextSegment::line_count).sum();
    let mut remaining = max_total.saturating_sub(step_lines);
    let mut truncated = step_lines > max_total;
    let mut out = Vec::with_capacity(segments.len());
    for mut seg in segments {
        if seg.reason == SegmentReason::StepLine {
            out.push(seg);
            continue;
        }
        let n = seg.line_count();
        if n <= remaining {
            remaining -= n;
            out.push(seg);
            continue;
        }
        truncated = true;
        if seg.reason == SegmentReason::Intermediate && remaining > 0 {
            let new_end = seg.start_line + remaining - 1;
            let dropped = seg.end_line - new_end;
            seg.text = seg.text.split('\n').take(remaining as usize).collect::<Vec<_>>().join("\n");
            seg.end_line = new_end;
            seg.elided_after = Some(dropped + seg.elided_after.unwrap_or(0));
            remaining = 0;
            out.push(seg);
        }
    }
    (out, truncated)
}

fn finish(
    f: &Finding,
    strategy: ContextStrategy,
    segments: Vec<ContextSegment>,
    truncated: bool,
    issues: Vec<ContextIssue>,
) -> CodeContext {
    let partial = issues.iter().any(|i| !matches!(i, ContextIssue::UnbalancedBraces { .. }));
    CodeContext {
        finding_id: f.finding_id.clone(),
        strategy,
        total_lines: segments.iter().map(ContextSegment::line_count).sum(),
        segments,
        truncated,
        partial,
        issues,
    }
}

/// Slices the code path of `f`. Missing files and out-of-range lines are
/// recorded as issues; extraction always produces a context.
pub fn extract_context(f: &Finding, tree: &SourceTree, limits: &ContextLimits) -> CodeContext {
    let mut issues = Vec::new();
    let steps = resolve_steps(f, tree, &mut issues);

    let mut segments = Vec::new();
    for (i, step) in steps.iter().enumerate() {
        let Some(step) = step else { continue };
        segments.push(segment(&step.file, step.loc.start_line, step.loc.end_line, SegmentReason::StepLine, step.index));
        if let Some(Some(next)) = steps.get(i + 1) {
            segments.extend(link_segments(step, next, limits));
        }
    }

    let (segments, truncated) = apply_budget(dedup(segments), limits.max_total_lines);
    finish(f, ContextStrategy::DataflowSlice, segments, truncated, issues)
}

/// Context for the baseline prompt: a window of five lines either side of
/// each step, or every file the trace touches in full.
pub fn extract_baseline_context(f: &Finding, tree: &SourceTree, style: BaselineStyle) -> CodeContext {
    let mut issues = Vec::new();
    let steps = resolve_steps(f, tree, &mut issues);
    let mut segments = Vec::new();
    for step in steps.iter().flatten() {
        let n = step.file.line_count();
        match style {
            BaselineStyle::Window5 => {
                let line = step.loc.start_line;
                let start = line.saturating_sub(5).max(1);
                let end = (line + 5).min(n);
                segments.push(segment(&step.file, start, end, SegmentReason::Window, step.index));
            }
            BaselineStyle::WholeFile => {
                let mut seg = segment(&step.file, 1, n, SegmentReason::WholeFile, step.index);
                seg.method = None;
                segments.push(seg);
            }
        }
    }
    let strategy = match style {
        BaselineStyle::Window5 => ContextStrategy::Window5,
        BaselineStyle::WholeFile => ContextStrategy::WholeFile,
    };
    finish(f, strategy, dedup(segments), false, issues)
}
