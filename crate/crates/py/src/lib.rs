//! Python bindings. Records cross the boundary as plain dicts and lists with
//! the same shape as the pipeline's JSON artifacts.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use sast_triage::adjudicate::{
    adjudicate_all, AdjudicateOptions, AdjudicationRecord, AuditRecord, MockBackend, MockScript,
};
use sast_triage::context::{BaselineStyle, CodeContext, ContextLimits, SourceTree};
use sast_triage::evaluate::{self, GroundTruth, LabelSet};
use sast_triage::prompt::{PromptBundle, PromptMode, PromptOptions};
use sast_triage::sarif::Finding;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(value_err)
}

fn parse_enum<T: DeserializeOwned>(name: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(name.to_ascii_uppercase())).map_err(value_err)
}

/// CWE rubric knowledge base.
#[pyclass(name = "RubricStore", frozen)]
struct PyRubricStore(sast_triage::RubricStore);

#[pymethods]
impl PyRubricStore {
    /// Built-in rubrics, or the `*.rubric` files of `directory` when given.
    #[new]
    #[pyo3(signature = (directory=None))]
    fn new(directory: Option<PathBuf>) -> PyResult<Self> {
        match directory {
            None => Ok(PyRubricStore(sast_triage::RubricStore::builtin())),
            Some(dir) => sast_triage::RubricStore::load(&dir).map(PyRubricStore).map_err(value_err),
        }
    }

    fn ids(&self) -> Vec<String> {
        self.0.ids().map(str::to_string).collect()
    }

    /// Rubric used for `cwe_id`, falling back to the generic one.
    fn rubric_for<'py>(&self, py: Python<'py>, cwe_id: &str) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, self.0.rubric_for(cwe_id))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// Canonical findings from SARIF text.
#[pyfunction]
#[pyo3(signature = (sarif_text, cwe_map=None))]
fn ingest_sarif<'py>(
    py: Python<'py>,
    sarif_text: &str,
    cwe_map: Option<BTreeMap<String, String>>,
) -> PyResult<Bound<'py, PyAny>> {
    let doc = sast_triage::parse_sarif(sarif_text.as_bytes()).map_err(value_err)?;
    to_py(py, &sast_triage::canonicalize(&doc, &cwe_map.unwrap_or_default()))
}

#[pyfunction]
#[pyo3(signature = (source, file="<source>"))]
fn locate_methods<'py>(py: Python<'py>, source: &str, file: &str) -> PyResult<Bound<'py, PyAny>> {
    let scan = sast_triage::locate_methods(source, file);
    if let Some(u) = scan.unbalanced {
        return Err(value_err(u));
    }
    to_py(py, &scan.methods)
}

#[pyfunction]
#[pyo3(signature = (finding, source_root, limits=None))]
fn extract_context<'py>(
    py: Python<'py>,
    finding: &Bound<'py, PyAny>,
    source_root: PathBuf,
    limits: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    let f: Finding = from_py(finding)?;
    let limits: ContextLimits = limits.map(from_py).transpose()?.unwrap_or_default();
    to_py(py, &sast_triage::extract_context(&f, &SourceTree::new(source_root), &limits))
}

#[pyfunction]
#[pyo3(signature = (finding, source_root, style="WINDOW5"))]
fn extract_baseline_context<'py>(
    py: Python<'py>,
    finding: &Bound<'py, PyAny>,
    source_root: PathBuf,
    style: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let f: Finding = from_py(finding)?;
    let style: BaselineStyle = parse_enum(style)?;
    to_py(py, &sast_triage::extract_baseline_context(&f, &SourceTree::new(source_root), style))
}

#[pyfunction]
fn render_trace(finding: &Bound<'_, PyAny>, context: &Bound<'_, PyAny>) -> PyResult<String> {
    let f: Finding = from_py(finding)?;
    let ctx: CodeContext = from_py(context)?;
    Ok(sast_triage::render_trace(&f, &ctx).rendered)
}

#[pyfunction]
#[pyo3(signature = (finding, context, mode="OPTIMIZED", rubrics=None, char_budget=Some(120_000)))]
fn compile_prompt<'py>(
    py: Python<'py>,
    finding: &Bound<'py, PyAny>,
    context: &Bound<'py, PyAny>,
    mode: &str,
    rubrics: Option<&PyRubricStore>,
    char_budget: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let f: Finding = from_py(finding)?;
    let ctx: CodeContext = from_py(context)?;
    let mode: PromptMode = parse_enum(mode)?;
    let builtin;
    let store = match rubrics {
        Some(r) => &r.0,
        None => {
            builtin = sast_triage::RubricStore::builtin();
            &builtin
        }
    };
    let bundle =
        sast_triage::compile_prompt(&f, &ctx, store.rubric_for(&f.cwe_id), mode, &PromptOptions { char_budget });
    to_py(py, &bundle)
}

/// Validates a model reply. Raises `ValueError("<KIND>: detail")` on failure.
#[pyfunction]
fn validate_response<'py>(py: Python<'py>, raw: &str) -> PyResult<Bound<'py, PyAny>> {
    match sast_triage::adjudicate::validate_response(raw) {
        Ok(v) => to_py(py, &v),
        Err(e) => Err(PyValueError::new_err(format!("{}: {e}", e.kind()))),
    }
}

/// Adjudicates prompt bundles against a scripted mock backend. Returns the
/// records in bundle order.
#[pyfunction]
#[pyo3(signature = (bundles, mock_script, parallelism=1))]
fn adjudicate_mock<'py>(
    py: Python<'py>,
    bundles: &Bound<'py, PyAny>,
    mock_script: &Bound<'py, PyAny>,
    parallelism: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let bundles: Vec<PromptBundle> = from_py(bundles)?;
    let script: MockScript = from_py(mock_script)?;
    let opts = AdjudicateOptions { parallelism: parallelism.max(1), ..AdjudicateOptions::default() };
    let records = py
        .detach(|| {
            let backend = MockBackend::new(script);
            let mut audit: Vec<AuditRecord> = Vec::new();
            adjudicate_all(&bundles, &backend, &opts, &mut audit)
        })
        .map_err(|e| PyOSError::new_err(e.to_string()))?;
    to_py(py, &records)
}

#[pyfunction]
fn precision(tp: u64, fp: u64) -> f64 {
    evaluate::precision(tp, fp)
}

#[pyfunction]
fn recall(tp: u64, fn_: u64) -> f64 {
    evaluate::recall(tp, fn_)
}

#[pyfunction]
fn f1(precision: f64, recall: f64) -> f64 {
    evaluate::f1(precision, recall)
}

#[pyfunction]
fn format_delta(delta: f64) -> String {
    evaluate::format_delta(delta)
}

/// Scores adjudication records against labels; returns the report dict.
#[pyfunction]
#[pyo3(name = "evaluate")]
fn evaluate_records<'py>(
    py: Python<'py>,
    findings: &Bound<'py, PyAny>,
    records: &Bound<'py, PyAny>,
    labels: &Bound<'py, PyAny>,
) -> PyResult<Bound<'py, PyAny>> {
    let findings: Vec<Finding> = from_py(findings)?;
    let records: Vec<AdjudicationRecord> = from_py(records)?;
    let truths: Vec<GroundTruth> = from_py(labels)?;
    let labels = LabelSet::new(&truths).map_err(value_err)?;
    to_py(py, &evaluate::evaluate(&findings, &records, &labels))
}

#[pymodule]
fn sast_triage_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRubricStore>()?;
    m.add_function(wrap_pyfunction!(ingest_sarif, m)?)?;
    m.add_function(wrap_pyfunction!(locate_methods, m)?)?;
    m.add_function(wrap_pyfunction!(extract_context, m)?)?;
    m.add_function(wrap_pyfunction!(extract_baseline_context, m)?)?;
    m.add_function(wrap_pyfunction!(render_trace, m)?)?;
    m.add_function(wrap_pyfunction!(compile_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(validate_response, m)?)?;
    m.add_function(wrap_pyfunction!(adjudicate_mock, m)?)?;
    m.add_function(wrap_pyfunction!(precision, m)?)?;
    m.add_function(wrap_pyfunction!(recall, m)?)?;
    m.add_function(wrap_pyfunction!(f1, m)?)?;
    m.add_function(wrap_pyfunction!(format_delta, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_records, m)?)?;
    Ok(())
}
