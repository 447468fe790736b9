//! Scoring of adjudications against ground-truth labels.
//!
//! The positive class is FALSE_POSITIVE: a true positive is an alert the model
//! suppressed that really was a false alarm. Metrics are micro-aggregated,
//! i.e. computed from confusion counts summed over each group.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adjudicate::{AdjudicationRecord, Verdict};
use crate::prompt::PromptMode;
use crate::rubric::BENCHMARK_CWES;
use crate::sarif::Finding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Label {
    TrueVulnerability,
    FalsePositive,
}

/// One line of `labels.jsonl`. Either `finding_id` or the full
/// (`rule_id`, `uri`, `start_line`) triple must be present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finding_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uri: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_line: Option<u32>,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Tp,
    Fp,
    Tn,
    Fn,
}

/// Confusion cell for one matched, evaluated finding.
pub fn score(verdict: Verdict, label: Label) -> Outcome {
    match (verdict, label) {
        (Verdict::FalsePositive, Label::FalsePositive) => Outcome::Tp,
        (Verdict::FalsePositive, Label::TrueVulnerability) => Outcome::Fp,
        (Verdict::TruePositive, Label::FalsePositive) => Outcome::Fn,
        (Verdict::TruePositive, Label::TrueVulnerability) => Outcome::Tn,
    }
}

pub fn precision(tp: u64, fp: u64) -> f64 {
    ratio(tp, tp + fp)
}

pub fn recall(tp: u64, fn_: u64) -> f64 {
    ratio(tp, tp + fn_)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn add(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::Tp => self.tp += 1,
            Outcome::Fp => self.fp += 1,
            Outcome::Tn => self.tn += 1,
            Outcome::Fn => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn precision(&self) -> f64 {
        precision(self.tp, self.fp)
    }

    pub fn recall(&self) -> f64 {
        recall(self.tp, self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }
}

/// Per-finding result of the join.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Scored(Outcome),
    Unevaluated,
    Unmatched,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FindingOutcome {
    pub finding_id: String,
    pub cwe_id: String,
    pub mode: PromptMode,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: String,
    #[serde(flatten)]
    pub counts: ConfusionCounts,
    pub unevaluated: u64,
    pub unmatched: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl GroupRow {
    fn new(group: &str) -> GroupRow {
        GroupRow {
            group: group.to_string(),
            counts: ConfusionCounts::default(),
            unevaluated: 0,
            unmatched: 0,
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        }
    }

    fn add(&mut self, status: Status) {
        match status {
            Status::Scored(o) => self.counts.add(o),
            Status::Unevaluated => self.unevaluated += 1,
            Status::Unmatched => self.unmatched += 1,
        }
    }

    fn finish(&mut self) {
        self.precision = self.counts.precision();
        self.recall = self.counts.recall();
        self.f1 = self.counts.f1();
    }

    /// Every finding in the group: scored, unevaluated or unmatched.
    pub fn findings(&self) -> u64 {
        self.counts.total() + self.unevaluated + self.unmatched
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: PromptMode,
    pub findings: u64,
    /// SHA-256 over the sorted finding ids; equal digests mean equal sets.
    pub findings_digest: String,
    pub overall: GroupRow,
    pub per_cwe: Vec<GroupRow>,
    pub unevaluated_count: u64,
    pub unmatched_count: u64,
}

fn cwe_order(cwe: &str) -> (usize, &str) {
    let rank = BENCHMARK_CWES.iter().position(|c| *c == cwe).unwrap_or(BENCHMARK_CWES.len());
    (rank, cwe)
}

pub fn findings_digest<'a>(ids: impl Iterator<Item = &'a str>) -> String {
    let mut ids: Vec<&str> = ids.collect();
    ids.sort_unstable();
    let mut h = Sha256::new();
    for id in ids {
        h.update(id.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Micro-aggregates outcomes of one prompt mode, overall and per CWE. The
/// per-CWE table lists the benchmark CWEs in their canonical order first,
/// then any others alphabetically.
pub fn aggregate(mode: PromptMode, outcomes: &[FindingOutcome]) -> EvalReport {
    let mut overall = GroupRow::new("overall");
    let mut groups: BTreeMap<(usize, &str), GroupRow> = BTreeMap::new();
    for o in outcomes {
        overall.add(o.status);
        groups.entry(cwe_order(&o.cwe_id)).or_insert_with(|| GroupRow::new(&o.cwe_id)).add(o.status);
    }
    overall.finish();
    let per_cwe: Vec<GroupRow> = groups
        .into_values()
        .map(|mut g| {
            g.finish();
            g
        })
        .collect();
    EvalReport {
        mode,
        findings: outcomes.len() as u64,
        findings_digest: findings_digest(outcomes.iter().map(|o| o.finding_id.as_str())),
        unevaluated_count: overall.unevaluated,
        unmatched_count: overall.unmatched,
        overall,
        per_cwe,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("reports cover different finding sets ({baseline} vs {optimized} findings)")]
    MismatchedSets { baseline: u64, optimized: u64 },
    #[error("labels.jsonl line {line}: {reason}")]
    BadLabel { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub group: String,
    pub baseline_f1: f64,
    pub optimized_f1: f64,
    pub delta: f64,
}

/// Signed F1 change, optimized minus baseline.
pub fn delta_f1(baseline_f1: f64, optimized_f1: f64) -> f64 {
    optimized_f1 - baseline_f1
}

/// Renders a delta at three decimals with a direction marker, as in
/// `↑ +0.194` or `↓ -0.104`.
pub fn format_delta(delta: f64) -> String {
    let text = format!("{delta:+.3}");
    match text.as_str() {
        "+0.000" | "-0.000" => "= 0.000".to_string(),
        t if t.starts_with('-') => format!("↓ {t}"),
        t => format!("↑ {t}"),
    }
}

/// Per-group F1 deltas: overall first, then every CWE row present in
/// either report.
pub fn compare_modes(baseline: &EvalReport, optimized: &EvalReport) -> Result<Vec<DeltaRow>, EvalError> {
    if baseline.findings_digest != optimized.findings_digest {
        return Err(EvalError::MismatchedSets { baseline: baseline.findings, optimized: optimized.findings });
    }
    let f1_of = |r: &EvalReport, g: &str| r.per_cwe.iter().find(|row| row.group == g).map_or(0.0, |row| row.f1);
    let mut groups: Vec<&str> = baseline.per_cwe.iter().chain(&optimized.per_cwe).map(|r| r.group.as_str()).collect();
    groups.sort_by_key(|g| cwe_order(g));
    groups.dedup();
    let mut rows = vec![DeltaRow {
        group: "overall".into(),
        baseline_f1: baseline.overall.f1,
        optimized_f1: optimized.overall.f1,
        delta: delta_f1(baseline.overall.f1, optimized.overall.f1),
    }];
    for g in groups {
        let (b, o) = (f1_of(baseline, g), f1_of(optimized, g));
        rows.push(DeltaRow { group: g.to_string(), baseline_f1: b, optimized_f1: o, delta: delta_f1(b, o) });
    }
    Ok(rows)
}

/// Result of looking a finding up in the label set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMatch {
    Matched(Label),
    Ambiguous,
    Missing,
}

/// Labels indexed by finding id and by (rule_id, uri, start_line).
#[derive(Debug, Clone, Default)]
pub struct LabelSet {
    by_id: HashMap<String, Vec<Label>>,
    by_triple: HashMap<(String, String, u32), Vec<Label>>,
    len: usize,
}

fn unique(labels: Option<&Vec<Label>>) -> LabelMatch {
    match labels.map(Vec::as_slice) {
        None | Some([]) => LabelMatch::Missing,
        Some([first, rest @ ..]) if rest.iter().all(|l| l == first) => LabelMatch::Matched(*first),
        Some(_) => LabelMatch::Ambiguous,
    }
}

impl LabelSet {
    pub fn new(truths: &[GroundTruth]) -> Result<LabelSet, EvalError> {
        let mut set = LabelSet::default();
        for (i, t) in truths.iter().enumerate() {
            let triple = match (&t.rule_id, &t.uri, t.start_line) {
                (Some(r), Some(u), Some(l)) => Some((r.clone(), u.clone(), l)),
                _ => None,
            };
            if t.finding_id.is_none() && triple.is_none() {
                return Err(EvalError::BadLabel {
                    line: i + 1,
                    reason: "needs finding_id or rule_id + uri + start_line".into(),
                });
            }
            if let Some(id) = &t.finding_id {
                set.by_id.entry(id.clone()).or_default().push(t.label);
            }
            if let Some(k) = triple {
                set.by_triple.entry(k).or_default().push(t.label);
            }
        }
        set.len = truths.len();
        Ok(set)
    }

    pub fn parse_jsonl(text: &str) -> Result<LabelSet, EvalError> {
        let truths: Vec<GroundTruth> =
            crate::jsonl::parse(text).map_err(|(line, e)| EvalError::BadLabel { line, reason: e.to_string() })?;
        LabelSet::new(&truths)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Matches each finding: exact finding id first, then the triple. A
    /// triple shared by several findings, or conflicting labels, is ambiguous.
    pub fn resolve(&self, findings: &[Finding]) -> Vec<LabelMatch> {
        let triple = |f: &Finding| (f.rule_id.clone(), f.primary_location.uri.clone(), f.primary_location.start_line);
        let mut shared: HashMap<(String, String, u32), usize> = HashMap::new();
        for f in findings {
            *shared.entry(triple(f)).or_default() += 1;
        }
        findings
            .iter()
            .map(|f| match unique(self.by_id.get(&f.finding_id)) {
                LabelMatch::Missing => {
                    let key = triple(f);
                    match unique(self.by_triple.get(&key)) {
                        LabelMatch::Matched(_) if shared[&key] > 1 => LabelMatch::Ambiguous,
                        m => m,
                    }
                }
                m => m,
            })
            .collect()
    }
}

/// Joins findings, their adjudications for `mode` and labels. A finding with
/// no record or an UNEVALUATED record is unevaluated; an evaluated finding
/// without a unique label is unmatched.
pub fn join(
    mode: PromptMode,
    findings: &[Finding],
    records: &[AdjudicationRecord],
    labels: &LabelSet,
) -> Vec<FindingOutcome> {
    let verdicts: HashMap<&str, Option<Verdict>> =
        records.iter().filter(|r| r.mode() == mode).map(|r| (r.finding_id(), r.verdict())).collect();
    let matches = labels.resolve(findings);
    findings
        .iter()
        .zip(matches)
        .map(|(f, m)| {
            let status = match (verdicts.get(f.finding_id.as_str()).copied().flatten(), m) {
                (None, _) => Status::Unevaluated,
                (Some(v), LabelMatch::Matched(l)) => Status::Scored(score(v, l)),
                (Some(_), _) => Status::Unmatched,
            };
            FindingOutcome { finding_id: f.finding_id.clone(), cwe_id: f.cwe_id.clone(), mode, status }
        })
        .collect()
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub reports: Vec<EvalReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub deltas: Vec<DeltaRow>,
    /// Adjudication records whose finding is not in the finding set.
    #[serde(default)]
    pub orphan_records: u64,
}

/// Scores every mode present in `records` (baseline first) and, when both
/// modes are present, the per-group deltas.
pub fn evaluate(findings: &[Finding], records: &[AdjudicationRecord], labels: &LabelSet) -> RunReport {
    let known: std::collections::HashSet<&str> = findings.iter().map(|f| f.finding_id.as_str()).collect();
    let orphan_records = records.iter().filter(|r| !known.contains(r.finding_id())).count() as u64;
    let mut reports = Vec::new();
    for mode in [PromptMode::Baseline, PromptMode::Optimized] {
        if records.iter().any(|r| r.mode() == mode) {
            reports.push(aggregate(mode, &join(mode, findings, records, labels)));
        }
    }
    let deltas = match reports.as_slice() {
        [b, o] => compare_modes(b, o).unwrap_or_default(),
        _ => Vec::new(),
    };
    RunReport { reports, deltas, orphan_records }
}

fn row_line(out: &mut String, r: &GroupRow) {
    let _ = writeln!(
        out,
        "{:<14} {:>5} {:>5} {:>5} {:>5} {:>6} {:>6} {:>9.3} {:>9.3} {:>9.3}",
        r.group,
        r.counts.tp,
        r.counts.fp,
        r.counts.tn,
        r.counts.fn_,
        r.unevaluated,
        r.unmatched,
        r.precision,
        r.recall,
        r.f1
    );
}

/// Human-readable `report.txt`.
pub fn render_text(report: &RunReport) -> String {
    let mut out = String::new();
    for r in &report.reports {
        let _ = writeln!(out, "== {} prompt: {} findings ==", r.mode, r.findings);
        let _ = writeln!(
            out,
            "{:<14} {:>5} {:>5} {:>5} {:>5} {:>6} {:>6} {:>9} {:>9} {:>9}",
            "group", "TP", "FP", "TN", "FN", "uneval", "unmat", "precision", "recall", "F1"
        );
        row_line(&mut out, &r.overall);
        for row in &r.per_cwe {
            row_line(&mut out, row);
        }
        out.push('\n');
    }
    if !report.deltas.is_empty() {
        let _ = writeln!(out, "== F1 change, optimized vs baseline ==");
        let _ = writeln!(out, "{:<14} {:>9} {:>9} {:>10}", "group", "baseline", "optimized", "delta");
        for d in &report.deltas {
            let _ = writeln!(
                out,
                "{:<14} {:>9.3} {:>9.3} {:>10}",
                d.group,
                d.baseline_f1,
                d.optimized_f1,
                format_delta(d.delta)
            );
        }
        out.push('\n');
    }
    if report.orphan_records > 0 {
        let _ = writeln!(out, "{} adjudication records had no matching finding", report.orphan_records);
    }
    out
}

/// CSV with one row per (mode, group), for plotting.
pub fn render_csv(report: &RunReport) -> String {
    let mut out = String::from("mode,group,tp,fp,tn,fn,unevaluated,unmatched,precision,recall,f1\n");
    for r in &report.reports {
        for row in std::iter::once(&r.overall).chain(&r.per_cwe) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6}",
                r.mode,
                row.group,
                row.counts.tp,
                row.counts.fp,
                row.counts.tn,
                row.counts.fn_,
                row.unevaluated,
                row.unmatched,
                row.precision,
                row.recall,
                row.f1
            );
        }
    }
    out
}
