//! Command-line front end: configuration, stage orchestration and the
//! output directory layout.
//!
//! Settings are resolved in three layers: built-in defaults, then the TOML
//! file given with `--config` (relative paths resolve against the file's
//! directory), then command-line flags (relative to the working directory).

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adjudicate::{
    adjudicate_all, AdjudicateOptions, AdjudicationRecord, Backend, DirAuditSink, LiveBackend, MockBackend, MockScript,
    RetryPolicy,
};
use crate::context::{
    extract_baseline_context, extract_context, BaselineStyle, CodeContext, ContextLimits, SourceTree,
};
use crate::evaluate::{evaluate, render_csv, render_text, LabelSet, RunReport};
use crate::jsonl;
use crate::prompt::{compile_prompt, PromptBundle, PromptMode, PromptOptions};
use crate::rubric::{RubricStore, BENCHMARK_CWES};
use crate::sarif::{canonicalize, parse_sarif, Finding, CWE_UNKNOWN};

pub const FINDINGS: &str = "findings.jsonl";
pub const CONTEXTS: &str = "contexts";
pub const BASELINE_CONTEXTS: &str = "contexts_baseline";
pub const PROMPTS: &str = "prompts";
pub const PROMPTS_INDEX: &str = "prompts.jsonl";
pub const ADJUDICATIONS: &str = "adjudications.jsonl";
pub const AUDIT: &str = "audit";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_CSV: &str = "report.csv";
pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_ECHO: &str = "run_config.json";

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, configuration or input files. Exit code 2.
    #[error("{0}")]
    Usage(String),
    /// A pipeline stage failed. Exit code 1.
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Stage { .. } => 1,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn stage_err(stage: &'static str) -> impl Fn(std::io::Error) -> CliError {
    move |e| CliError::Stage { stage, message: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModeChoice {
    #[serde(alias = "optimized")]
    Optimized,
    #[serde(alias = "baseline")]
    Baseline,
    #[serde(alias = "both")]
    Both,
}

impl ModeChoice {
    pub fn modes(self) -> Vec<PromptMode> {
        match self {
            ModeChoice::Optimized => vec![PromptMode::Optimized],
            ModeChoice::Baseline => vec![PromptMode::Baseline],
            ModeChoice::Both => vec![PromptMode::Optimized, PromptMode::Baseline],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StyleChoice {
    #[serde(alias = "window5")]
    Window5,
    #[serde(alias = "whole-file", alias = "whole_file")]
    WholeFile,
}

impl From<StyleChoice> for BaselineStyle {
    fn from(s: StyleChoice) -> Self {
        match s {
            StyleChoice::Window5 => BaselineStyle::Window5,
            StyleChoice::WholeFile => BaselineStyle::WholeFile,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key_env: String,
    pub script: Option<PathBuf>,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    pub timeout_secs: u64,
    pub max_output_chars: u32,
}

impl Default for BackendConfig {
    fn default() -> Self {
        let retry = RetryPolicy::default();
        BackendConfig {
            kind: BackendKind::Mock,
            endpoint: None,
            model: None,
            api_key_env: "LLM_API_KEY".into(),
            script: None,
            max_attempts: retry.max_attempts,
            backoff_base_ms: retry.backoff_base_ms,
            backoff_max_ms: retry.backoff_max_ms,
            timeout_secs: 300,
            max_output_chars: AdjudicateOptions::default().max_output_chars,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimitsConfig {
    pub max_total_lines: u32,
    pub max_intermediate_lines: u32,
    pub elide_keep_head: u32,
    pub elide_keep_tail: u32,
    /// Prompt character budget; 0 disables it.
    pub prompt_char_budget: usize,
}

impl Default for LimitsConfig {
    fn default() -> Self {
        let c = ContextLimits::default();
        LimitsConfig {
            max_total_lines: c.max_total_lines,
            max_intermediate_lines: c.max_intermediate_lines,
            elide_keep_head: c.elide_keep_head,
            elide_keep_tail: c.elide_keep_tail,
            prompt_char_budget: PromptOptions::default().char_budget.unwrap_or(0),
        }
    }
}

impl LimitsConfig {
    pub fn context(&self) -> ContextLimits {
        ContextLimits {
            max_total_lines: self.max_total_lines,
            max_intermediate_lines: self.max_intermediate_lines,
            elide_keep_head: self.elide_keep_head,
            elide_keep_tail: self.elide_keep_tail,
        }
    }

    pub fn prompt(&self) -> PromptOptions {
        PromptOptions { char_budget: (self.prompt_char_budget > 0).then_some(self.prompt_char_budget) }
    }
}

/// Fully resolved run settings; also the schema of the `--config` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub sarif: Option<PathBuf>,
    pub source_root: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub rubrics_dir: Option<PathBuf>,
    pub prompt_mode: ModeChoice,
    pub baseline_style: StyleChoice,
    pub parallelism: usize,
    pub backend: BackendConfig,
    pub limits: LimitsConfig,
    /// Rule id to CWE, used when the SARIF rule carries no CWE tag.
    pub cwe_map: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sarif: None,
            source_root: None,
            output_dir: None,
            labels: None,
            rubrics_dir: None,
            prompt_mode: ModeChoice::Optimized,
            baseline_style: StyleChoice::Window5,
            parallelism: 1,
            backend: BackendConfig::default(),
            limits: LimitsConfig::default(),
            cwe_map: BTreeMap::new(),
        }
    }
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<RunConfig, CliError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| usage(format!("config: {e}")))?;
        for p in [
            &mut cfg.sarif,
            &mut cfg.source_root,
            &mut cfg.output_dir,
            &mut cfg.labels,
            &mut cfg.rubrics_dir,
            &mut cfg.backend.script,
        ] {
            rebase(base_dir, p);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::from_toml(&text, base)
    }

    pub fn apply(&mut self, o: &Overrides) {
        let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
            if v.is_some() {
                slot.clone_from(v);
            }
        };
        set(&mut self.sarif, &o.sarif);
        set(&mut self.source_root, &o.source_root);
        set(&mut self.output_dir, &o.output);
        set(&mut self.labels, &o.labels);
        set(&mut self.rubrics_dir, &o.rubrics);
        set(&mut self.backend.script, &o.mock_script);
        if let Some(m) = o.prompt_mode {
            self.prompt_mode = m;
        }
        if let Some(s) = o.baseline_style {
            self.baseline_style = s;
        }
        if let Some(p) = o.parallelism {
            self.parallelism = p;
        }
        if let Some(b) = o.backend {
            self.backend.kind = b;
        }
        if o.model.is_some() {
            self.backend.model.clone_from(&o.model);
        }
        if o.endpoint.is_some() {
            self.backend.endpoint.clone_from(&o.endpoint);
        }
        if let Some(budget) = o.char_budget {
            self.limits.prompt_char_budget = budget;
        }
    }

    pub fn output(&self) -> Result<&Path, CliError> {
        self.output_dir.as_deref().ok_or_else(|| usage("no output directory (use --output or output_dir)"))
    }

    fn require_file(&self, what: &str, p: &Option<PathBuf>) -> Result<PathBuf, CliError> {
        let p = p.as_ref().ok_or_else(|| usage(format!("{what} is not set")))?;
        if !p.is_file() {
            return Err(usage(format!("{what} {} does not exist", p.display())));
        }
        Ok(p.clone())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.parallelism < 1 {
            return Err(usage("parallelism must be at least 1"));
        }
        if self.limits.elide_keep_head + self.limits.elide_keep_tail > self.limits.max_intermediate_lines {
            return Err(usage("limits: elide_keep_head + elide_keep_tail exceeds max_intermediate_lines"));
        }
        self.output()?;
        if let Some(dir) = &self.source_root {
            if !dir.is_dir() {
                return Err(usage(format!("source root {} is not a directory", dir.display())));
            }
        }
        if let Some(dir) = &self.rubrics_dir {
            if !dir.is_dir() {
                return Err(usage(format!("rubrics dir {} is not a directory", dir.display())));
            }
        }
        if self.labels.is_some() {
            self.require_file("labels file", &self.labels)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// SARIF 2.1.0 log to triage.
    #[arg(long, global = true)]
    pub sarif: Option<PathBuf>,
    /// Root the SARIF artifact URIs are relative to.
    #[arg(long, global = true)]
    pub source_root: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    /// Ground-truth labels (JSON Lines).
    #[arg(long, global = true)]
    pub labels: Option<PathBuf>,
    /// Directory of `*.rubric` files replacing the built-in rubrics.
    #[arg(long, global = true)]
    pub rubrics: Option<PathBuf>,
    #[arg(long, value_enum, global = true)]
    pub prompt_mode: Option<ModeChoice>,
    #[arg(long, value_enum, global = true)]
    pub baseline_style: Option<StyleChoice>,
    #[arg(long, value_enum, global = true)]
    pub backend: Option<BackendKind>,
    /// Scripted responses for the mock backend.
    #[arg(long, global = true)]
    pub mock_script: Option<PathBuf>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Chat-completions URL for the live backend.
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    /// Maximum concurrent model requests.
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// Prompt character budget (0 disables).
    #[arg(long, global = true)]
    pub char_budget: Option<usize>,
    /// Skip stages whose recorded inputs and outputs still match.
    #[arg(long, global = true)]
    pub resume: bool,
    /// More logging (repeatable).
    #[arg(long, short, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Parse SARIF into findings.jsonl and print a per-CWE summary.
    Ingest,
    /// Extract code context for every finding.
    Context,
    /// Compile prompts for every finding and mode.
    Prompts,
    /// Send prompts to the backend and validate the replies.
    Adjudicate,
    /// Score adjudications against labels.
    Evaluate,
    /// Run every stage in order.
    Run,
}

#[derive(Debug, Parser)]
#[command(name = "sast-triage", version, about = "Triage SARIF alerts with a language model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

impl Cli {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.overrides.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        cfg.apply(&self.overrides);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Digest of everything the stage read, including settings.
    pub input_key: String,
    /// Output path (relative to the output directory) to SHA-256.
    pub outputs: BTreeMap<String, String>,
}

/// `manifest.json`: what each completed stage consumed and produced.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    fn load(out: &Path) -> Manifest {
        std::fs::read_to_string(out.join(MANIFEST)).ok().and_then(|t| serde_json::from_str(&t).ok()).unwrap_or_default()
    }

    fn save(&self, out: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        text.push('\n');
        std::fs::write(out.join(MANIFEST), text)
    }

    /// True when `stage` ran with `input_key` and its outputs are unchanged.
    fn is_current(&self, out: &Path, stage: &str, input_key: &str) -> bool {
        let Some(rec) = self.stages.get(stage) else {
            return false;
        };
        rec.input_key == input_key
            && rec
                .outputs
                .iter()
                .all(|(rel, hash)| std::fs::read(out.join(rel)).is_ok_and(|bytes| sha256_hex(&bytes) == *hash))
    }
}

/// Collects the files a stage writes, with their hashes.
struct Writer<'a> {
    out: &'a Path,
    stage: &'static str,
    written: BTreeMap<String, String>,
}

impl<'a> Writer<'a> {
    fn new(out: &'a Path, stage: &'static str) -> Writer<'a> {
        Writer { out, stage, written: BTreeMap::new() }
    }

    fn fresh_dir(&self, rel: &str) -> Result<(), CliError> {
        let dir = self.out.join(rel);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(stage_err(self.stage))?;
        }
        std::fs::create_dir_all(&dir).map_err(stage_err(self.stage))
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        std::fs::write(self.out.join(rel), bytes).map_err(stage_err(self.stage))?;
        self.written.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn record(&mut self, rel: &str) -> Result<(), CliError> {
        let bytes = std::fs::read(self.out.join(rel)).map_err(stage_err(self.stage))?;
        self.written.insert(rel.to_string(), sha256_hex(&bytes));
        Ok(())
    }
}

fn read_artifact(out: &Path, rel: &str, stage: &'static str) -> Result<Vec<u8>, CliError> {
    std::fs::read(out.join(rel)).map_err(|e| CliError::Stage {
        stage,
        message: format!("cannot read {rel} (run the earlier stage first): {e}"),
    })
}

fn read_jsonl<T: serde::de::DeserializeOwned>(out: &Path, rel: &str, stage: &'static str) -> Result<Vec<T>, CliError> {
    let bytes = read_artifact(out, rel, stage)?;
    let text = String::from_utf8(bytes).map_err(|e| CliError::Stage { stage, message: format!("{rel}: {e}") })?;
    jsonl::parse(&text).map_err(|(line, e)| CliError::Stage { stage, message: format!("{rel}:{line}: {e}") })
}

fn to_jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    jsonl::to_string(items).expect("artifacts serialize").into_bytes()
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("artifacts serialize");
    text.push('\n');
    text.into_bytes()
}

/// Stage key from a list of labelled parts.
fn input_key(parts: &[(&str, &[u8])]) -> String {
    let mut h = Sha256::new();
    for (name, bytes) in parts {
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    hex::encode(h.finalize())
}

fn file_digest(path: &Option<PathBuf>) -> Vec<u8> {
    path.as_ref().and_then(|p| std::fs::read(p).ok()).map(|b| sha256_hex(&b).into_bytes()).unwrap_or_default()
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("settings serialize")
}

/// Number of findings per CWE, benchmark CWEs first.
pub fn cwe_summary(findings: &[Finding]) -> Vec<(String, usize)> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for f in findings {
        *counts.entry(f.cwe_id.as_str()).or_default() += 1;
    }
    let mut rows: Vec<(String, usize)> = counts.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    rows.sort_by(|a, b| {
        let rank = |c: &str| BENCHMARK_CWES.iter().position(|x| *x == c).unwrap_or(BENCHMARK_CWES.len());
        (rank(&a.0), &a.0).cmp(&(rank(&b.0), &b.0))
    });
    rows
}

/// A pipeline stage over the output directory.
pub struct Pipeline {
    pub config: RunConfig,
    pub resume: bool,
    out: PathBuf,
    manifest: Manifest,
}

impl Pipeline {
    pub fn new(config: RunConfig, resume: bool) -> Result<Pipeline, CliError> {
        let out = config.output()?.to_path_buf();
        std::fs::create_dir_all(&out).map_err(|e| usage(format!("{}: {e}", out.display())))?;
        let manifest = Manifest::load(&out);
        Ok(Pipeline { config, resume, out, manifest })
    }

    pub fn output_dir(&self) -> &Path {
        &self.out
    }

    fn echo_config(&self) -> Result<(), CliError> {
        std::fs::write(self.out.join(CONFIG_ECHO), pretty(&self.config)).map_err(stage_err("config"))
    }

    /// Runs `body` unless resuming and the stage is current.
    fn stage(
        &mut self,
        name: &'static str,
        key: String,
        body: impl FnOnce(&Self, &mut Writer) -> Result<(), CliError>,
    ) -> Result<(), CliError> {
        if self.resume && self.manifest.is_current(&self.out, name, &key) {
            log::info!("{name}: up to date, skipped");
            return Ok(());
        }
        let out = self.out.clone();
        let mut w = Writer::new(&out, name);
        body(self, &mut w)?;
        self.manifest.stages.insert(name.to_string(), StageRecord { input_key: key, outputs: w.written });
        self.manifest.save(&self.out).map_err(stage_err(name))
    }

    pub fn ingest(&mut self) -> Result<Vec<(String, usize)>, CliError> {
        let path = self.config.require_file("SARIF file", &self.config.sarif)?;
        let raw = std::fs::read(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let key = input_key(&[("sarif", &raw), ("cwe_map", &json_bytes(&self.config.cwe_map))]);
        let doc = parse_sarif(&raw).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let findings = canonicalize(&doc, &self.config.cwe_map);
        let summary = cwe_summary(&findings);
        self.stage("ingest", key, |_, w| w.write(FINDINGS, &to_jsonl(&findings)))?;
        Ok(summary)
    }

    fn findings(&self, stage: &'static str) -> Result<Vec<Finding>, CliError> {
        read_jsonl(&self.out, FINDINGS, stage)
    }

    fn modes(&self) -> Vec<PromptMode> {
        self.config.prompt_mode.modes()
    }

    pub fn context(&mut self) -> Result<(), CliError> {
        let root = self.config.source_root.clone().ok_or_else(|| usage("source root is not set"))?;
        let findings_raw = read_artifact(&self.out, FINDINGS, "context")?;
        let findings = self.findings("context")?;
        let key = input_key(&[
            ("findings", &findings_raw),
            ("root", root.to_string_lossy().as_bytes()),
            ("limits", &json_bytes(&self.config.limits.context())),
            ("modes", &json_bytes(&self.modes())),
            ("style", &json_bytes(&self.config.baseline_style)),
        ]);
        self.stage("context", key, |p, w| {
            let tree = SourceTree::new(&root);
            let limits = p.config.limits.context();
            let style: BaselineStyle = p.config.baseline_style.into();
            for mode in p.modes() {
                let (dir, contexts): (&str, Vec<CodeContext>) = match mode {
                    PromptMode::Optimized => {
                        (CONTEXTS, findings.iter().map(|f| extract_context(f, &tree, &limits)).collect())
                    }
                    PromptMode::Baseline => (
                        BASELINE_CONTEXTS,
                        findings.iter().map(|f| extract_baseline_context(f, &tree, style)).collect(),
                    ),
                };
                w.fresh_dir(dir)?;
                for c in &contexts {
                    w.write(&format!("{dir}/{}.json", c.finding_id), &pretty(c))?;
                    if c.partial || c.truncated {
                        log::warn!("{}: context partial={} truncated={}", c.finding_id, c.partial, c.truncated);
                    }
                }
                w.write(&format!("{dir}.jsonl"), &to_jsonl(&contexts))?;
            }
            Ok(())
        })
    }

    fn rubrics(&self) -> Result<RubricStore, CliError> {
        match &self.config.rubrics_dir {
            Some(dir) => RubricStore::load(dir).map_err(|e| usage(e.to_string())),
            None => Ok(RubricStore::builtin()),
        }
    }

    pub fn prompts(&mut self) -> Result<(), CliError> {
        let rubrics = self.rubrics()?;
        let mut parts: Vec<(&str, Vec<u8>)> = vec![
            ("findings", read_artifact(&self.out, FINDINGS, "prompts")?),
            ("rubrics", format!("{rubrics:?}").into_bytes()),
            ("budget", json_bytes(&self.config.limits.prompt())),
            ("modes", json_bytes(&self.modes())),
        ];
        for mode in self.modes() {
            let rel = match mode {
                PromptMode::Optimized => "contexts.jsonl",
                PromptMode::Baseline => "contexts_baseline.jsonl",
            };
            parts.push(("contexts", read_artifact(&self.out, rel, "prompts")?));
        }
        let key = input_key(&parts.iter().map(|(n, b)| (*n, b.as_slice())).collect::<Vec<_>>());
        let findings = self.findings("prompts")?;
        let mut contexts: HashMap<PromptMode, HashMap<String, CodeContext>> = HashMap::new();
        for mode in self.modes() {
            let rel = match mode {
                PromptMode::Optimized => "contexts.jsonl",
                PromptMode::Baseline => "contexts_baseline.jsonl",
            };
            let list: Vec<CodeContext> = read_jsonl(&self.out, rel, "prompts")?;
            contexts.insert(mode, list.into_iter().map(|c| (c.finding_id.clone(), c)).collect());
        }
        self.stage("prompts", key, |p, w| {
            let opts = p.config.limits.prompt();
            w.fresh_dir(PROMPTS)?;
            let mut bundles = Vec::new();
            for f in &findings {
                for mode in p.modes() {
                    let ctx = contexts[&mode].get(&f.finding_id).ok_or_else(|| CliError::Stage {
                        stage: "prompts",
                        message: format!("no {mode} context for finding {}", f.finding_id),
                    })?;
                    let bundle = compile_prompt(f, ctx, rubrics.rubric_for(&f.cwe_id), mode, &opts);
                    w.write(
                        &format!("{PROMPTS}/{}.{}.txt", f.finding_id, mode.file_tag()),
                        bundle.transcript().as_bytes(),
                    )?;
                    bundles.push(bundle);
                }
            }
            w.write(PROMPTS_INDEX, &to_jsonl(&bundles))
        })
    }

    fn backend(&self) -> Result<Box<dyn Backend>, CliError> {
        let b = &self.config.backend;
        match b.kind {
            BackendKind::Mock => {
                let path = self.config.require_file("mock script", &b.script)?;
                let mut script = MockScript::load(&path).map_err(|e| usage(e.to_string()))?;
                if let Some(model) = &b.model {
                    script.model.clone_from(model);
                }
                Ok(Box::new(MockBackend::new(script)))
            }
            BackendKind::Live => {
                let endpoint = b.endpoint.as_deref().ok_or_else(|| usage("live backend needs an endpoint"))?;
                let model = b.model.as_deref().ok_or_else(|| usage("live backend needs a model"))?;
                Ok(Box::new(LiveBackend::new(endpoint, model, &b.api_key_env, Duration::from_secs(b.timeout_secs))))
            }
        }
    }

    pub fn adjudicate(&mut self) -> Result<Vec<AdjudicationRecord>, CliError> {
        let index = read_artifact(&self.out, PROMPTS_INDEX, "adjudicate")?;
        let key = input_key(&[
            ("prompts", &index),
            ("backend", &json_bytes(&self.config.backend)),
            ("script", &file_digest(&self.config.backend.script)),
        ]);
        let backend = self.backend()?;
        let bundles: Vec<PromptBundle> = read_jsonl(&self.out, PROMPTS_INDEX, "adjudicate")?;
        let b = &self.config.backend;
        let opts = AdjudicateOptions {
            parallelism: self.config.parallelism,
            retry: RetryPolicy {
                max_attempts: b.max_attempts,
                backoff_base_ms: b.backoff_base_ms,
                backoff_max_ms: b.backoff_max_ms,
            },
            max_output_chars: b.max_output_chars,
        };
        self.stage("adjudicate", key, |_, w| {
            w.fresh_dir(AUDIT)?;
            let mut sink = DirAuditSink::create(&w.out.join(AUDIT)).map_err(stage_err("adjudicate"))?;
            let records =
                adjudicate_all(&bundles, backend.as_ref(), &opts, &mut sink).map_err(stage_err("adjudicate"))?;
            for bundle in &bundles {
                w.record(&format!("{AUDIT}/{}.{}.json", bundle.finding_id, bundle.mode.file_tag()))?;
            }
            let failed = records.iter().filter(|r| r.verdict().is_none()).count();
            if failed > 0 {
                log::warn!("{failed} of {} prompts produced no verdict", records.len());
            }
            w.write(ADJUDICATIONS, &to_jsonl(&records))
        })?;
        read_jsonl(&self.out, ADJUDICATIONS, "adjudicate")
    }

    pub fn evaluate(&mut self) -> Result<RunReport, CliError> {
        let labels_path = self.config.require_file("labels file", &self.config.labels)?;
        let labels_raw =
            std::fs::read_to_string(&labels_path).map_err(|e| usage(format!("{}: {e}", labels_path.display())))?;
        let labels =
            LabelSet::parse_jsonl(&labels_raw).map_err(|e| usage(format!("{}: {e}", labels_path.display())))?;
        let key = input_key(&[
            ("findings", &read_artifact(&self.out, FINDINGS, "evaluate")?),
            ("adjudications", &read_artifact(&self.out, ADJUDICATIONS, "evaluate")?),
            ("labels", labels_raw.as_bytes()),
        ]);
        let findings = self.findings("evaluate")?;
        let records: Vec<AdjudicationRecord> = read_jsonl(&self.out, ADJUDICATIONS, "evaluate")?;
        let report = evaluate(&findings, &records, &labels);
        self.stage("evaluate", key, |_, w| {
            w.write(REPORT_JSON, &pretty(&report))?;
            w.write(REPORT_TXT, render_text(&report).as_bytes())?;
            w.write(REPORT_CSV, render_csv(&report).as_bytes())
        })?;
        Ok(report)
    }
}

/// Writes to stdout, ignoring a closed pipe.
fn say(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_summary(summary: &[(String, usize)]) {
    let total: usize = summary.iter().map(|(_, n)| n).sum();
    say(&format!("{total} findings\n"));
    for (cwe, n) in summary {
        let note = if cwe == CWE_UNKNOWN { "  (no CWE resolved)" } else { "" };
        say(&format!("  {cwe:<12} {n:>6}{note}\n"));
    }
}

/// Executes one subcommand.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let config = cli.resolve()?;
    let mut p = Pipeline::new(config, cli.overrides.resume)?;
    p.echo_config()?;
    match cli.command {
        Command::Ingest => print_summary(&p.ingest()?),
        Command::Context => p.context()?,
        Command::Prompts => p.prompts()?,
        Command::Adjudicate => {
            p.adjudicate()?;
        }
        Command::Evaluate => say(&render_text(&p.evaluate()?)),
        Command::Run => {
            print_summary(&p.ingest()?);
            p.context()?;
            p.prompts()?;
            let records = p.adjudicate()?;
            let failed = records.iter().filter(|r| r.verdict().is_none()).count();
            say(&format!("{} adjudications, {failed} unevaluated\n", records.len()));
            if p.config.labels.is_some() {
                say(&render_text(&p.evaluate()?));
            }
        }
    }
    Ok(())
}

/// Entry point for `main`: parses arguments, runs, returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.overrides.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
