//! Fixture loaders and criterion checks shared by the integration tests and
//! the acceptance runner. Each `check_*` returns a one-line summary on success
//! and a description of the first mismatch on failure.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Deserialize;
use serde_json::Value;

use sast_triage::adjudicate::{
    adjudicate_all, validate_response, AdjudicateOptions, AdjudicationRecord, AuditRecord, MockBackend, MockScript,
    ScriptAction, ScriptEntry, Verdict,
};
use sast_triage::context::{extract_baseline_context, BaselineStyle};
use sast_triage::evaluate::{
    aggregate, compare_modes, evaluate, format_delta, FindingOutcome, GroundTruth, Label, LabelMatch, LabelSet,
    Outcome, Status,
};
use sast_triage::prompt::skeleton;
use sast_triage::sarif::{CodeLocation, StepKind, TraceStep};
use sast_triage::{
    canonicalize, compile_prompt, extract_context, locate_methods, parse_sarif, render_trace, ContextLimits, Finding,
    PromptMode, PromptOptions, RubricStore, SourceTree,
};

pub type Check = Result<String, String>;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn read(rel: &str) -> String {
    let path = fixtures().join(rel);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn json<T: serde::de::DeserializeOwned>(rel: &str) -> T {
    serde_json::from_str(&read(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

/// Independent F1 oracle: the harmonic mean of P and R.
pub fn f1_oracle(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Finding with one trace step per line of `file`, last step as the primary location.
pub fn synthetic_finding(file: &str, steps: &[u32], cwe: &str) -> Finding {
    let trace: Vec<TraceStep> = steps
        .iter()
        .enumerate()
        .map(|(i, &line)| TraceStep {
            index: i as u32 + 1,
            kind: StepKind::for_position(i, steps.len()),
            location: CodeLocation::line(file, line),
            step_message: format!("step {}", i + 1),
        })
        .collect();
    Finding {
        finding_id: format!("synthetic-{file}"),
        origin_index: 0,
        rule_id: "test/rule".into(),
        cwe_id: cwe.into(),
        message: "Synthetic alert.".into(),
        primary_location: trace.last().map(|s| s.location.clone()).unwrap_or_else(|| CodeLocation::line(file, 1)),
        trace,
        extra_flow_count: 0,
    }
}

// ---------------------------------------------------------------------------
// Reported results
// ---------------------------------------------------------------------------

/// (model, precision, recall, reported F1) for the OWASP and OpenVuln panels.
pub const REPORTED_PRF: [(&str, f64, f64, f64); 20] = [
    ("owasp/grok-4", 0.976, 0.855, 0.912),
    ("owasp/gemini-2.5-pro", 0.978, 0.851, 0.910),
    ("owasp/gpt-oss-120b", 0.921, 0.874, 0.897),
    ("owasp/gpt-oss-20b", 0.869, 0.900, 0.884),
    ("owasp/o4-mini", 0.907, 0.840, 0.872),
    ("owasp/qwen3-235b-a22b", 0.964, 0.778, 0.861),
    ("owasp/gpt-5", 0.806, 0.815, 0.811),
    ("owasp/deepseek-r1", 0.972, 0.667, 0.791),
    ("owasp/deepseek-r1-distill", 0.941, 0.573, 0.712),
    ("owasp/mixtral-8x7b-instruct", 0.555, 0.135, 0.217),
    ("openvuln/grok-4", 1.000, 0.857, 0.923),
    ("openvuln/gemini-2.5-pro", 1.000, 0.229, 0.372),
    ("openvuln/gpt-oss-120b", 0.879, 0.829, 0.853),
    ("openvuln/gpt-oss-20b", 0.868, 0.943, 0.904),
    ("openvuln/o4-mini", 0.842, 0.914, 0.877),
    ("openvuln/qwen3-235b-a22b", 1.000, 0.657, 0.793),
    ("openvuln/gpt-5", 1.000, 0.914, 0.955),
    ("openvuln/deepseek-r1", 1.000, 0.486, 0.654),
    ("openvuln/deepseek-r1-distill", 0.826, 0.543, 0.655),
    ("openvuln/mixtral-8x7b-instruct", 0.806, 0.735, 0.769),
];

/// (row, baseline F1, optimized F1, printed delta).
pub const REPORTED_DELTAS: [(&str, f64, f64, &str); 20] = [
    ("owasp/deepseek-r1", 0.895, 0.791, "-0.104"),
    ("owasp/deepseek-r1-distill", 0.785, 0.712, "-0.073"),
    ("owasp/gemini-2.5-pro", 0.892, 0.910, "+0.018"),
    ("owasp/grok-4", 0.830, 0.912, "+0.082"),
    ("owasp/mixtral-8x7b", 0.128, 0.217, "+0.089"),
    ("owasp/o4-mini", 0.784, 0.872, "+0.088"),
    ("owasp/gpt-5", 0.758, 0.811, "+0.053"),
    ("owasp/gpt-oss-120b", 0.825, 0.897, "+0.072"),
    ("owasp/gpt-oss-20b", 0.690, 0.884, "+0.194"),
    ("owasp/qwen3-235b-a22b", 0.893, 0.861, "-0.032"),
    ("openvuln/deepseek-r1", 0.458, 0.654, "+0.196"),
    ("openvuln/deepseek-r1-distill", 0.559, 0.655, "+0.096"),
    ("openvuln/gemini-2.5-pro", 0.615, 0.372, "-0.243"),
    ("openvuln/grok-4", 0.655, 0.923, "+0.268"),
    ("openvuln/mixtral-8x7b", 0.553, 0.769, "+0.216"),
    ("openvuln/o4-mini", 0.800, 0.877, "+0.077"),
    ("openvuln/gpt-5", 0.621, 0.955, "+0.334"),
    ("openvuln/gpt-oss-120b", 0.620, 0.853, "+0.233"),
    ("openvuln/gpt-oss-20b", 0.523, 0.904, "+0.381"),
    ("openvuln/qwen3-235b-a22b", 0.590, 0.793, "+0.203"),
];

pub const F1_TOLERANCE: f64 = 0.005;

pub fn check_f1_reproduction() -> Check {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for (name, p, r, reported) in REPORTED_PRF {
        let got = sast_triage::evaluate::f1(p, r);
        if (got - f1_oracle(p, r)).abs() > 1e-12 {
            return Err(format!("{name}: f1 {got} disagrees with oracle {}", f1_oracle(p, r)));
        }
        let err = (got - reported).abs();
        if err > F1_TOLERANCE {
            return Err(format!("{name}: f1({p}, {r}) = {got:.4}, reported {reported:.3}"));
        }
        worst = worst.max(err);
    }
    let elapsed = started.elapsed();
    if elapsed >= Duration::from_secs(1) {
        return Err(format!("took {elapsed:?}, limit 1 s"));
    }
    Ok(format!("20/20 within ±{F1_TOLERANCE} (max error {worst:.4}) in {elapsed:?}"))
}

fn report_with_f1(mode: PromptMode, f1: f64) -> sast_triage::evaluate::EvalReport {
    let mut report = aggregate(mode, &[]);
    report.overall.f1 = f1;
    report
}

pub fn check_delta_reproduction() -> Check {
    for (name, base, opt, printed) in REPORTED_DELTAS {
        let rows =
            compare_modes(&report_with_f1(PromptMode::Baseline, base), &report_with_f1(PromptMode::Optimized, opt))
                .map_err(|e| format!("{name}: {e}"))?;
        let overall = &rows[0];
        let got = format!("{:+.3}", overall.delta);
        if got != printed {
            return Err(format!("{name}: delta {got}, printed {printed}"));
        }
        let arrow = if printed.starts_with('-') { "↓" } else { "↑" };
        let rendered = format_delta(overall.delta);
        if rendered != format!("{arrow} {printed}") {
            return Err(format!("{name}: rendered {rendered:?}"));
        }
    }
    Ok("20/20 deltas exact at 3 decimals".into())
}

// ---------------------------------------------------------------------------
// CLI determinism
// ---------------------------------------------------------------------------

pub fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sast-triage"))
}

/// Full `run` over the fixture corpus in both prompt modes with the scripted
/// mock backend. Returns the process status code.
pub fn run_corpus(out: &Path, parallelism: usize) -> i32 {
    let f = fixtures();
    let status = cli()
        .arg("--sarif")
        .arg(f.join("corpus.sarif"))
        .arg("--source-root")
        .arg(&f)
        .arg("--labels")
        .arg(f.join("corpus.labels.jsonl"))
        .arg("--mock-script")
        .arg(f.join("corpus.mock.json"))
        .args(["--backend", "mock", "--prompt-mode", "both", "--parallelism", &parallelism.to_string()])
        .arg("--output")
        .arg(out)
        .arg("run")
        .output()
        .expect("spawn sast-triage");
    status.status.code().unwrap_or(-1)
}

/// Relative path → bytes for every file under `dir`.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let Ok(entries) = std::fs::read_dir(dir) else { return };
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

pub fn check_determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for (dir, par) in [(&a, 1), (&b, 4)] {
        let code = run_corpus(dir, par);
        if code != 0 {
            return Err(format!("run into {} exited {code}", dir.display()));
        }
    }
    let prompts_a = snapshot(&a.join("prompts"));
    let prompts_b = snapshot(&b.join("prompts"));
    if prompts_a.is_empty() {
        return Err("no prompts written".into());
    }
    if prompts_a != prompts_b {
        let diff = prompts_a.keys().find(|k| prompts_a.get(*k) != prompts_b.get(*k));
        return Err(format!("prompts/ differ at {diff:?}"));
    }
    for file in ["adjudications.jsonl", "report.json"] {
        let (x, y) = (std::fs::read(a.join(file)), std::fs::read(b.join(file)));
        match (x, y) {
            (Ok(x), Ok(y)) if x == y => {}
            (Ok(_), Ok(_)) => return Err(format!("{file} differs")),
            (x, y) => return Err(format!("{file}: {:?} / {:?}", x.err(), y.err())),
        }
    }
    Ok(format!(
        "{} prompt files, adjudications.jsonl and report.json byte-identical (parallelism 1 vs 4)",
        prompts_a.len()
    ))
}

// ---------------------------------------------------------------------------
// Trace golden
// ---------------------------------------------------------------------------

pub fn owasp205_finding() -> (Finding, SourceTree) {
    let raw = std::fs::read(fixtures().join("owasp205/owasp205.sarif")).unwrap();
    let doc = parse_sarif(&raw).expect("owasp205.sarif parses");
    let mut findings = canonicalize(&doc, &BTreeMap::new());
    assert_eq!(findings.len(), 1);
    (findings.remove(0), SourceTree::new(fixtures().join("owasp205")))
}

pub fn check_trace_golden() -> Check {
    let (f, tree) = owasp205_finding();
    let ctx = extract_context(&f, &tree, &ContextLimits::default());
    let got = render_trace(&f, &ctx).rendered;
    let want = read("owasp205/trace.golden.txt");
    if got == want {
        Ok(format!("{} steps, {} bytes identical to golden", f.trace.len(), want.len()))
    } else {
        let line = got.lines().zip(want.lines()).position(|(a, b)| a != b);
        Err(format!("differs from golden (first differing line {line:?})\n--- got\n{got}--- want\n{want}"))
    }
}

// ---------------------------------------------------------------------------
// Slicing corpus
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
pub struct SegmentCase {
    pub file: String,
    pub steps: Vec<u32>,
    pub expected: Vec<(u32, u32, String)>,
}

pub type Boundaries = BTreeMap<String, Vec<(String, u32, u32, u32)>>;

pub fn boundaries() -> Boundaries {
    json("slicing/boundaries.json")
}

pub fn segment_cases() -> Vec<SegmentCase> {
    json("slicing/segments.json")
}

pub fn check_boundaries() -> Result<usize, String> {
    let mut n = 0;
    for (file, want) in boundaries() {
        let text = read(&format!("slicing/{file}"));
        let scan = locate_methods(&text, &file);
        if let Some(u) = &scan.unbalanced {
            return Err(format!("{file}: {u}"));
        }
        let got: Vec<(String, u32, u32, u32)> =
            scan.methods.iter().map(|m| (m.name.clone(), m.start_line, m.body_start_line, m.end_line)).collect();
        if got != want {
            return Err(format!("{file}: located {got:?}, labeled {want:?}"));
        }
        n += want.len();
    }
    Ok(n)
}

pub fn check_segments() -> Result<usize, String> {
    let tree = SourceTree::new(fixtures().join("slicing"));
    let cases = segment_cases();
    for case in &cases {
        let f = synthetic_finding(&case.file, &case.steps, "CWE-89");
        let ctx = extract_context(&f, &tree, &ContextLimits::default());
        let got: Vec<(u32, u32, String)> =
            ctx.segments.iter().map(|s| (s.start_line, s.end_line, s.reason.as_str().to_string())).collect();
        if got != case.expected {
            return Err(format!("{} steps {:?}: got {got:?}, labeled {:?}", case.file, case.steps, case.expected));
        }
    }
    Ok(cases.len())
}

pub fn check_slicing() -> Check {
    let methods = check_boundaries()?;
    let cases = check_segments()?;
    let files = boundaries().len();
    if files != 12 {
        return Err(format!("boundary table covers {files} files, expected 12"));
    }
    Ok(format!("{files} files, {methods} method boundaries and {cases} segment lists exact"))
}

// ---------------------------------------------------------------------------
// Metric conservation
// ---------------------------------------------------------------------------

pub const CONSERVATION_FINDINGS: usize = 1000;
pub const CONSERVATION_TRIALS: u64 = 50;

const CWES: [&str; 6] = ["CWE-22", "CWE-78", "CWE-79", "CWE-89", "CWE-502", "CWE-UNKNOWN"];

/// Random findings, records and labels, including missing records,
/// UNEVALUATED records, missing labels and conflicting labels.
pub fn random_trial(rng: &mut StdRng, n: usize) -> (Vec<Finding>, Vec<AdjudicationRecord>, Vec<GroundTruth>) {
    let mut findings = Vec::with_capacity(n);
    let mut records = Vec::new();
    let mut truths = Vec::new();
    for i in 0..n {
        let cwe = CWES[rng.random_range(0..CWES.len())];
        let mut f = synthetic_finding(&format!("F{i}.java"), &[1 + i as u32 % 50], cwe);
        f.finding_id = format!("{i:064x}");
        let label = if rng.random_bool(0.5) { Label::FalsePositive } else { Label::TrueVulnerability };
        match rng.random_range(0..10) {
            0 => {}
            1 => {
                truths.push(GroundTruth {
                    finding_id: Some(f.finding_id.clone()),
                    rule_id: None,
                    uri: None,
                    start_line: None,
                    label: Label::FalsePositive,
                });
                truths.push(GroundTruth {
                    finding_id: Some(f.finding_id.clone()),
                    rule_id: None,
                    uri: None,
                    start_line: None,
                    label: Label::TrueVulnerability,
                });
            }
            2 => truths.push(GroundTruth {
                finding_id: None,
                rule_id: Some(f.rule_id.clone()),
                uri: Some(f.primary_location.uri.clone()),
                start_line: Some(f.primary_location.start_line),
                label,
            }),
            _ => truths.push(GroundTruth {
                finding_id: Some(f.finding_id.clone()),
                rule_id: None,
                uri: None,
                start_line: None,
                label,
            }),
        }
        let raw = match rng.random_range(0..10) {
            0 => None,
            1 => Some("not json".to_string()),
            _ => Some(format!(
                r#"{{"verdict":"{}","confidence":"HIGH","reasoning":"r"}}"#,
                if rng.random_bool(0.5) { "FALSE_POSITIVE" } else { "TRUE_POSITIVE" }
            )),
        };
        if let Some(raw) = raw {
            records.push(record_for(&f.finding_id, &raw));
        }
        findings.push(f);
    }
    (findings, records, truths)
}

fn record_for(id: &str, raw: &str) -> AdjudicationRecord {
    use sast_triage::adjudicate::{Adjudication, FailureDetail, Unevaluated};
    match validate_response(raw) {
        Ok(v) => AdjudicationRecord::Evaluated(Adjudication {
            finding_id: id.into(),
            mode: PromptMode::Optimized,
            verdict: v.verdict,
            confidence: v.confidence,
            reasoning: v.reasoning,
            salvaged: v.salvaged,
            raw_response: raw.into(),
            latency_ms: 0,
            attempt_count: 1,
        }),
        Err(e) => AdjudicationRecord::Unevaluated(Unevaluated {
            finding_id: id.into(),
            mode: PromptMode::Optimized,
            error: FailureDetail { kind: e.kind().into(), detail: e.to_string() },
            raw_response: Some(raw.into()),
            attempt_count: 1,
        }),
    }
}

/// Brute-force confusion counts computed without the library's join: labels
/// are looked up directly from the truth list.
pub fn brute_force_counts(findings: &[Finding], records: &[AdjudicationRecord], truths: &[GroundTruth]) -> [u64; 6] {
    let mut c = [0u64; 6]; // tp fp tn fn unevaluated unmatched
    for f in findings {
        let verdict = records.iter().find(|r| r.finding_id() == f.finding_id).and_then(|r| r.verdict());
        let Some(verdict) = verdict else {
            c[4] += 1;
            continue;
        };
        let by_id: Vec<Label> =
            truths.iter().filter(|t| t.finding_id.as_deref() == Some(&f.finding_id)).map(|t| t.label).collect();
        let labels = if by_id.is_empty() {
            let shared = findings
                .iter()
                .filter(|g| {
                    g.rule_id == f.rule_id
                        && g.primary_location.uri == f.primary_location.uri
                        && g.primary_location.start_line == f.primary_location.start_line
                })
                .count();
            let by_triple: Vec<Label> = truths
                .iter()
                .filter(|t| {
                    t.rule_id.as_deref() == Some(&f.rule_id)
                        && t.uri.as_deref() == Some(&f.primary_location.uri)
                        && t.start_line == Some(f.primary_location.start_line)
                })
                .map(|t| t.label)
                .collect();
            if shared > 1 {
                Vec::new()
            } else {
                by_triple
            }
        } else {
            by_id
        };
        let label = match labels.as_slice() {
            [first, rest @ ..] if rest.iter().all(|l| l == first) => *first,
            _ => {
                c[5] += 1;
                continue;
            }
        };
        let predicted_fp = verdict == Verdict::FalsePositive;
        let actual_fp = label == Label::FalsePositive;
        let slot = match (predicted_fp, actual_fp) {
            (true, true) => 0,
            (true, false) => 1,
            (false, false) => 2,
            (false, true) => 3,
        };
        c[slot] += 1;
    }
    c
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn check_conservation() -> Check {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    for trial in 0..CONSERVATION_TRIALS {
        let (findings, records, truths) = random_trial(&mut rng, CONSERVATION_FINDINGS);
        let labels = LabelSet::new(&truths).map_err(|e| e.to_string())?;
        let report = evaluate(&findings, &records, &labels);
        let r = &report.reports[0];
        let o = &r.overall;
        let sum = o.counts.tp + o.counts.fp + o.counts.tn + o.counts.fn_ + o.unevaluated + o.unmatched;
        if sum != CONSERVATION_FINDINGS as u64 {
            return Err(format!("trial {trial}: counts sum to {sum}"));
        }
        let want = brute_force_counts(&findings, &records, &truths);
        let got = [o.counts.tp, o.counts.fp, o.counts.tn, o.counts.fn_, o.unevaluated, o.unmatched];
        if got != want {
            return Err(format!("trial {trial}: counts {got:?}, brute force {want:?}"));
        }
        let p = ratio(want[0], want[0] + want[1]);
        let rc = ratio(want[0], want[0] + want[3]);
        let f = f1_oracle(p, rc);
        if o.precision != p || o.recall != rc || o.f1 != f {
            return Err(format!("trial {trial}: P/R/F1 {}/{}/{} vs {p}/{rc}/{f}", o.precision, o.recall, o.f1));
        }
        let per: u64 = r.per_cwe.iter().map(|g| g.findings()).sum();
        if per != CONSERVATION_FINDINGS as u64 {
            return Err(format!("trial {trial}: per-CWE rows hold {per} findings"));
        }
    }
    Ok(format!(
        "{CONSERVATION_TRIALS} trials x {CONSERVATION_FINDINGS} findings conserved, metrics bit-equal to brute force"
    ))
}

// ---------------------------------------------------------------------------
// Injection hardening
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
pub struct InjectionCase {
    pub name: String,
    pub code: Vec<String>,
    #[serde(default)]
    pub message: Option<String>,
    #[serde(default)]
    pub step_message: Option<String>,
}

pub fn injection_cases() -> Vec<InjectionCase> {
    json("injection/cases.json")
}

/// Source with `payload` between a tainted read and a SQL sink, plus the
/// finding that traces through it.
fn injection_victim(payload: &[String], message: Option<&str>, step_message: Option<&str>) -> (String, Finding) {
    let mut lines = vec![
        "package victim;".to_string(),
        String::new(),
        "class Victim {".to_string(),
        "    void handle(javax.servlet.http.HttpServletRequest request) throws Exception {".to_string(),
        "        String p = request.getParameter(\"q\");".to_string(),
    ];
    lines.extend(payload.iter().map(|l| format!("        {l}")));
    lines.push("        java.sql.Statement st = null;".into());
    lines.push("        st.executeQuery(p);".into());
    lines.push("    }".into());
    lines.push("}".into());
    let sink = lines.len() as u32 - 2;
    let mut f = synthetic_finding("Victim.java", &[5, sink], "CWE-89");
    if let Some(m) = message {
        f.message = m.to_string();
    }
    if let Some(m) = step_message {
        f.trace[0].step_message = m.to_string();
    }
    (lines.join("\n") + "\n", f)
}

pub fn check_injection() -> Check {
    let cases = injection_cases();
    let rubrics = RubricStore::builtin();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    for case in &cases {
        let benign_code = vec!["int filler = 0;".to_string(); case.code.len()];
        let mut prompts = Vec::new();
        for (tag, code, message, step) in [
            ("benign", &benign_code, None, None),
            ("adversarial", &case.code, case.message.as_deref(), case.step_message.as_deref()),
        ] {
            let dir = tmp.path().join(&case.name).join(tag);
            std::fs::create_dir_all(&dir).unwrap();
            let (source, f) = injection_victim(code, message, step);
            std::fs::write(dir.join("Victim.java"), source).unwrap();
            let tree = SourceTree::new(&dir);
            let ctx = extract_context(&f, &tree, &ContextLimits::default());
            let bundle = compile_prompt(
                &f,
                &ctx,
                rubrics.rubric_for(&f.cwe_id),
                PromptMode::Optimized,
                &PromptOptions::default(),
            );
            prompts.push(bundle);
        }
        let (benign, adversarial) = (&prompts[0], &prompts[1]);
        if benign.system_text != adversarial.system_text {
            return Err(format!("{}: system text changed", case.name));
        }
        let (sb, sa) = (skeleton(&benign.user_text), skeleton(&adversarial.user_text));
        if sb != sa {
            let line = sb.lines().zip(sa.lines()).position(|(a, b)| a != b);
            return Err(format!("{}: structure differs outside evidence fences (line {line:?})", case.name));
        }
        if benign.user_text == adversarial.user_text {
            return Err(format!("{}: payload did not reach the prompt", case.name));
        }
    }
    Ok(format!("{} adversarial prompts structurally identical to benign controls", cases.len()))
}

// ---------------------------------------------------------------------------
// Response validation corpus
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
pub struct ResponseCase {
    pub name: String,
    pub raw: String,
    pub expect: Value,
}

pub fn response_cases() -> Vec<ResponseCase> {
    json("responses.json")
}

fn field_of(e: &sast_triage::adjudicate::ValidationError) -> Option<&str> {
    use sast_triage::adjudicate::ValidationError::*;
    match e {
        NotJson { .. } => None,
        MissingField { field } | BadEnum { field, .. } | InvalidField { field, .. } => Some(field),
    }
}

pub fn check_response(case: &ResponseCase) -> Result<(), String> {
    let got = validate_response(&case.raw);
    match (&got, case.expect.get("ok"), case.expect.get("error")) {
        (Ok(v), Some(ok), None) => {
            let want = (ok["verdict"].as_str(), ok["confidence"].as_str(), ok["salvaged"].as_bool());
            let have = (Some(v.verdict.as_str()), Some(v.confidence.as_str()), Some(v.salvaged));
            if want != have {
                return Err(format!("{}: got {have:?}, expected {want:?}", case.name));
            }
        }
        (Err(e), None, Some(kind)) => {
            if Some(e.kind()) != kind.as_str() {
                return Err(format!("{}: got {}, expected {kind}", case.name, e.kind()));
            }
            let want_field = case.expect.get("field").and_then(Value::as_str);
            if want_field.is_some() && field_of(e) != want_field {
                return Err(format!("{}: error on {:?}, expected {want_field:?}", case.name, field_of(e)));
            }
        }
        _ => return Err(format!("{}: got {got:?}, expected {}", case.name, case.expect)),
    }
    Ok(())
}

pub fn check_responses() -> Check {
    let cases = response_cases();
    let mut salvaged = 0;
    for case in &cases {
        check_response(case)?;
        if case.expect["ok"]["salvaged"].as_bool() == Some(true) {
            if !case.name.starts_with("wrapped") {
                return Err(format!("{}: salvaged but not a wrapped-prose case", case.name));
            }
            salvaged += 1;
        }
    }
    Ok(format!("{}/{} classified exactly, {salvaged} salvaged", cases.len(), cases.len()))
}

// ---------------------------------------------------------------------------
// Perfect-oracle end to end
// ---------------------------------------------------------------------------

pub fn corpus_findings() -> Vec<Finding> {
    let raw = std::fs::read(fixtures().join("corpus.sarif")).unwrap();
    canonicalize(&parse_sarif(&raw).expect("corpus.sarif parses"), &BTreeMap::new())
}

/// Mock script built directly from the labels, independent of the checked-in one.
pub fn oracle_script(findings: &[Finding], labels: &LabelSet) -> Result<MockScript, String> {
    let mut script = MockScript::default();
    for (f, m) in findings.iter().zip(labels.resolve(findings)) {
        let LabelMatch::Matched(label) = m else {
            return Err(format!("{}: no unique label", f.finding_id));
        };
        let verdict = if label == Label::FalsePositive { "FALSE_POSITIVE" } else { "TRUE_POSITIVE" };
        script.reply(
            f.finding_id.clone(),
            format!(r#"{{"verdict":"{verdict}","confidence":"HIGH","reasoning":"oracle"}}"#),
        );
    }
    Ok(script)
}

fn script_verdict(entry: &ScriptEntry) -> Option<Verdict> {
    let raw = match entry {
        ScriptEntry::Single(ScriptAction::Reply { reply }) | ScriptEntry::Single(ScriptAction::Text(reply)) => reply,
        _ => return None,
    };
    validate_response(raw).ok().map(|v| v.verdict)
}

pub fn check_perfect_oracle() -> Check {
    let started = Instant::now();
    let findings = corpus_findings();
    if findings.len() != 20 {
        return Err(format!("corpus has {} findings, expected 20", findings.len()));
    }
    let labels = LabelSet::parse_jsonl(&read("corpus.labels.jsonl")).map_err(|e| e.to_string())?;
    let oracle = oracle_script(&findings, &labels)?;
    let fixture = MockScript::load(&fixtures().join("corpus.mock.json")).map_err(|e| e.to_string())?;
    for f in &findings {
        let want = oracle.responses.get(&f.finding_id).and_then(script_verdict);
        let have = fixture.responses.get(&f.finding_id).and_then(script_verdict);
        if want.is_none() || want != have {
            return Err(format!("corpus.mock.json disagrees with the labels for {}", f.finding_id));
        }
    }

    let tree = SourceTree::new(fixtures());
    let rubrics = RubricStore::builtin();
    let opts = PromptOptions::default();
    let mut bundles = Vec::new();
    for f in &findings {
        let ctx = extract_context(f, &tree, &ContextLimits::default());
        bundles.push(compile_prompt(f, &ctx, rubrics.rubric_for(&f.cwe_id), PromptMode::Optimized, &opts));
        let ctx = extract_baseline_context(f, &tree, BaselineStyle::Window5);
        bundles.push(compile_prompt(f, &ctx, rubrics.rubric_for(&f.cwe_id), PromptMode::Baseline, &opts));
    }
    let backend = MockBackend::new(fixture);
    let adj_opts = AdjudicateOptions { parallelism: 4, ..AdjudicateOptions::default() };
    let mut audit: Vec<AuditRecord> = Vec::new();
    let records = adjudicate_all(&bundles, &backend, &adj_opts, &mut audit).map_err(|e| e.to_string())?;
    let report = evaluate(&findings, &records, &labels);
    if report.reports.len() != 2 {
        return Err(format!("{} mode reports", report.reports.len()));
    }
    for r in &report.reports {
        let o = &r.overall;
        if (o.precision, o.recall, o.f1) != (1.0, 1.0, 1.0) {
            return Err(format!("{}: P={} R={} F1={}", r.mode.as_str(), o.precision, o.recall, o.f1));
        }
        if o.counts.total() != 20 || o.unevaluated + o.unmatched != 0 {
            return Err(format!("{}: overall row {o:?}", r.mode.as_str()));
        }
        let mut sum = [0u64; 6];
        for g in &r.per_cwe {
            for (s, v) in
                sum.iter_mut().zip([g.counts.tp, g.counts.fp, g.counts.tn, g.counts.fn_, g.unevaluated, g.unmatched])
            {
                *s += v;
            }
        }
        if sum != [o.counts.tp, o.counts.fp, o.counts.tn, o.counts.fn_, o.unevaluated, o.unmatched] {
            return Err(format!("{}: per-CWE sums {sum:?} differ from overall", r.mode.as_str()));
        }
    }
    let elapsed = started.elapsed();
    if elapsed >= Duration::from_secs(10) {
        return Err(format!("took {elapsed:?}, limit 10 s"));
    }
    let o = &report.reports[1].overall;
    Ok(format!(
        "both modes P=R=F1=1.000 (tp={} tn={}), {} per-CWE rows sum to overall, {elapsed:?}",
        o.counts.tp,
        o.counts.tn,
        report.reports[1].per_cwe.len()
    ))
}

/// Statuses of a mode report reconstructed from outcomes; used by proptests.
pub fn outcome(id: usize, cwe: &str, status: Status) -> FindingOutcome {
    FindingOutcome { finding_id: format!("{id}"), cwe_id: cwe.into(), mode: PromptMode::Optimized, status }
}

pub fn all_outcomes() -> [Status; 6] {
    [
        Status::Scored(Outcome::Tp),
        Status::Scored(Outcome::Fp),
        Status::Scored(Outcome::Tn),
        Status::Scored(Outcome::Fn),
        Status::Unevaluated,
        Status::Unmatched,
    ]
}
