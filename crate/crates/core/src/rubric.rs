//! CWE micro-rubrics.
//!
//! A rubric is a short list of declarative rules for one weakness class,
//! each tagged as a high-risk pattern, a safe idiom, or an operation that is
//! often mistaken for a sanitizer, plus a few checklist questions. Rubrics
//! live in plain-text `.rubric` files:
//!
//! ```text
//! # comment
//! cwe: CWE-089
//! title: SQL Injection
//! HIGH_RISK: Concatenating request data into a query string passed to execute() is exploitable.
//! SAFE_IDIOM: ...
//! NON_SANITIZER: ...
//! CHECK: Does the tainted value reach the query text or only a bound parameter?
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Key of the fallback rubric.
pub const GENERIC: &str = "GENERIC";

/// CWE classes with shipped rubrics, in reporting order.
pub const BENCHMARK_CWES: [&str; 10] =
    ["CWE-022", "CWE-078", "CWE-079", "CWE-089", "CWE-090", "CWE-327", "CWE-330", "CWE-501", "CWE-614", "CWE-643"];

pub const MIN_RULES: usize = 10;
pub const MAX_RULES: usize = 20;
pub const MIN_CHECKS: usize = 3;
pub const MAX_CHECKS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RuleTag {
    HighRisk,
    SafeIdiom,
    NonSanitizer,
}

impl RuleTag {
    pub const ALL: [RuleTag; 3] = [RuleTag::HighRisk, RuleTag::SafeIdiom, RuleTag::NonSanitizer];

    pub fn as_str(self) -> &'static str {
        match self {
            RuleTag::HighRisk => "HIGH_RISK",
            RuleTag::SafeIdiom => "SAFE_IDIOM",
            RuleTag::NonSanitizer => "NON_SANITIZER",
        }
    }

    fn parse(s: &str) -> Option<RuleTag> {
        RuleTag::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for RuleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricRule {
    pub tag: RuleTag,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rubric {
    pub cwe_id: String,
    pub title: String,
    pub rules: Vec<RubricRule>,
    pub checklist: Vec<String>,
}

#[derive(Debug, Error)]
pub enum RubricError {
    #[error("{file}: {reason}")]
    InvalidRubric {
        file: String,
        /// 1-based rule position, when the problem is a single rule.
        rule_index: Option<usize>,
        reason: String,
    },
    #[error("{file}: line {line}: {reason}")]
    Syntax { file: String, line: usize, reason: String },
    #[error("rubric directory is missing {0}")]
    Missing(String),
    #[error("duplicate rubric for {cwe} in {file}")]
    Duplicate { cwe: String, file: String },
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(file: &str, rule_index: Option<usize>, reason: impl Into<String>) -> RubricError {
    RubricError::InvalidRubric { file: file.to_string(), rule_index, reason: reason.into() }
}

/// One declarative sentence: a single terminal period and no other sentence
/// break or question.
fn is_single_declarative_sentence(text: &str) -> bool {
    let t = text.trim();
    if !t.ends_with('.') || t.contains('?') || t.contains('!') {
        return false;
    }
    let body = &t[..t.len() - 1];
    !body.contains(". ")
}

impl Rubric {
    pub fn parse(file: &str, text: &str) -> Result<Rubric, RubricError> {
        let mut cwe_id = None;
        let mut title = None;
        let mut rules = Vec::new();
        let mut checklist = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let syntax =
                |reason: &str| RubricError::Syntax { file: file.to_string(), line: n + 1, reason: reason.to_string() };
            let (key, value) = line.split_once(':').ok_or_else(|| syntax("expected `KEY: value`"))?;
            let value = value.trim().to_string();
            if value.is_empty() {
                return Err(syntax("empty value"));
            }
            match key.trim() {
                "cwe" => cwe_id = Some(value),
                "title" => title = Some(value),
                "CHECK" => checklist.push(value),
                other => match RuleTag::parse(other) {
                    Some(tag) => rules.push(RubricRule { tag, text: value }),
                    None => return Err(syntax(&format!("unknown key `{other}`"))),
                },
            }
        }
        let rubric = Rubric {
            cwe_id: cwe_id.ok_or_else(|| invalid(file, None, "missing `cwe:`"))?,
            title: title.ok_or_else(|| invalid(file, None, "missing `title:`"))?,
            rules,
            checklist,
        };
        rubric.validate(file)?;
        Ok(rubric)
    }

    pub fn validate(&self, file: &str) -> Result<(), RubricError> {
        if self.cwe_id != GENERIC && crate::sarif::normalize_cwe(&self.cwe_id).as_deref() != Some(&self.cwe_id) {
            return Err(invalid(file, None, format!("bad cwe id `{}`", self.cwe_id)));
        }
        let n = self.rules.len();
        if !(MIN_RULES..=MAX_RULES).contains(&n) {
            return Err(invalid(file, None, format!("{n} rules, expected {MIN_RULES}..={MAX_RULES}")));
        }
        for tag in RuleTag::ALL {
            if !self.rules.iter().any(|r| r.tag == tag) {
                return Err(invalid(file, None, format!("no {tag} rule")));
            }
        }
        for (i, rule) in self.rules.iter().enumerate() {
            if !is_single_declarative_sentence(&rule.text) {
                return Err(invalid(file, Some(i + 1), "not a single declarative sentence"));
            }
        }
        let c = self.checklist.len();
        if !(MIN_CHECKS..=MAX_CHECKS).contains(&c) {
            return Err(invalid(file, None, format!("{c} checklist items, expected {MIN_CHECKS}..={MAX_CHECKS}")));
        }
        let texts = std::iter::once(&self.title).chain(self.rules.iter().map(|r| &r.text)).chain(self.checklist.iter());
        for (i, t) in texts.enumerate() {
            if t.contains('{') || t.contains('}') {
                let idx = (1..=n).contains(&i).then_some(i);
                return Err(invalid(file, idx, "braces are reserved for template placeholders"));
            }
        }
        Ok(())
    }
}

/// Rubrics keyed by CWE id, plus the `GENERIC` fallback.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RubricStore {
    rubrics: BTreeMap<String, Rubric>,
}

const BUILTIN: &[(&str, &str)] = &[
    ("cwe-022.rubric", include_str!("../rubrics/cwe-022.rubric")),
    ("cwe-078.rubric", include_str!("../rubrics/cwe-078.rubric")),
    ("cwe-079.rubric", include_str!("../rubrics/cwe-079.rubric")),
    ("cwe-089.rubric", include_str!("../rubrics/cwe-089.rubric")),
    ("cwe-090.rubric", include_str!("../rubrics/cwe-090.rubric")),
    ("cwe-327.rubric", include_str!("../rubrics/cwe-327.rubric")),
    ("cwe-330.rubric", include_str!("../rubrics/cwe-330.rubric")),
    ("cwe-501.rubric", include_str!("../rubrics/cwe-501.rubric")),
    ("cwe-614.rubric", include_str!("../rubrics/cwe-614.rubric")),
    ("cwe-643.rubric", include_str!("../rubrics/cwe-643.rubric")),
    ("generic.rubric", include_str!("../rubrics/generic.rubric")),
];

impl RubricStore {
    fn from_files<'a>(files: impl IntoIterator<Item = (String, &'a str)>) -> Result<Self, RubricError> {
        let mut rubrics = BTreeMap::new();
        for (name, text) in files {
            let rubric = Rubric::parse(&name, text)?;
            let key = rubric.cwe_id.clone();
            if rubrics.insert(key.clone(), rubric).is_some() {
                return Err(RubricError::Duplicate { cwe: key, file: name });
            }
        }
        for required in BENCHMARK_CWES.iter().chain([&GENERIC]) {
            if !rubrics.contains_key(*required) {
                return Err(RubricError::Missing((*required).to_string()));
            }
        }
        Ok(RubricStore { rubrics })
    }

    /// The rubrics compiled into the binary (same content as `rubrics/`).
    pub fn builtin() -> RubricStore {
        Self::from_files(BUILTIN.iter().map(|(n, t)| (n.to_string(), *t))).expect("shipped rubrics are valid")
    }

    /// Loads every `*.rubric` file in `dir`.
    pub fn load(dir: &Path) -> Result<RubricStore, RubricError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| RubricError::Io { path, source }
        };
        let mut files = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(io(dir))? {
            let path = entry.map_err(io(dir))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("rubric") {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(io(&path))?;
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            files.push((name, text));
        }
        files.sort();
        Self::from_files(files.iter().map(|(n, t)| (n.clone(), t.as_str())))
    }

    pub fn len(&self) -> usize {
        self.rubrics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rubrics.is_empty()
    }

    pub fn get(&self, cwe_id: &str) -> Option<&Rubric> {
        self.rubrics.get(cwe_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.rubrics.keys().map(String::as_str)
    }

    /// Exact match, else the generic rubric. Never fails.
    pub fn rubric_for(&self, cwe_id: &str) -> &Rubric {
        self.rubrics.get(cwe_id).unwrap_or_else(|| &self.rubrics[GENERIC])
    }
}
