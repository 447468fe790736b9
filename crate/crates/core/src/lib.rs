//! Triage of static-analysis alerts with a language model.
//!
//! The pipeline ingests a SARIF log, slices the code each alert's dataflow
//! trace passes through, compiles a structured prompt with a CWE-specific
//! rubric, asks a model backend for a verdict and scores the verdicts
//! against ground-truth labels.

pub mod adjudicate;
pub mod cli;
pub mod context;
pub mod evaluate;
pub mod jsonl;
pub mod prompt;
pub mod rubric;
pub mod sarif;

pub use context::{extract_baseline_context, extract_context, locate_methods, CodeContext, ContextLimits, SourceTree};
pub use prompt::{compile_prompt, render_trace, PromptBundle, PromptMode, PromptOptions};
pub use rubric::{Rubric, RubricStore};
pub use sarif::{canonicalize, parse_sarif, Finding};
