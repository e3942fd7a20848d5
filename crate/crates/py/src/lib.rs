//! Python bindings for the evaluation harness: statistics, action parsing,
//! catalog loading/validation, hashing, and whole-corpus analysis.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use secagent_eval::controller::Action;
use secagent_eval::{catalog, cli, controller, report, stats, trace, util};
use std::collections::HashMap;
use std::path::Path;

fn test_result_dict<'py>(
    py: Python<'py>,
    result: &stats::TestResult,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new_bound(py);
    d.set_item("statistic", result.statistic)?;
    d.set_item("p_value", result.p_value)?;
    d.set_item("method", &result.method)?;
    d.set_item("samples", result.samples)?;
    Ok(d)
}

/// Exact two-sided McNemar test from the discordant counts.
#[pyfunction]
fn mcnemar_exact(py: Python<'_>, b: u64, c: u64) -> PyResult<Py<PyDict>> {
    Ok(test_result_dict(py, &stats::mcnemar_exact(b, c))?.into())
}

/// Task-blocked sign-permutation test over per-task success differences.
#[pyfunction]
#[pyo3(signature = (diffs, replicates=100_000, seed=0))]
fn sign_permutation(
    py: Python<'_>,
    diffs: Vec<f64>,
    replicates: u64,
    seed: u64,
) -> PyResult<Py<PyDict>> {
    let result = stats::sign_permutation_blocked_with(&diffs, replicates, seed)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(test_result_dict(py, &result)?.into())
}

/// Seeded percentile bootstrap interval for the mean of `diffs`.
#[pyfunction]
#[pyo3(signature = (diffs, replicates=10_000, level=0.95, seed=0))]
fn bootstrap_ci(
    diffs: Vec<f64>,
    replicates: u64,
    level: f64,
    seed: u64,
) -> PyResult<(f64, f64)> {
    stats::bootstrap_ci(&diffs, replicates, level, seed)
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
fn cohen_kappa(labels_a: Vec<String>, labels_b: Vec<String>) -> PyResult<f64> {
    stats::cohen_kappa(&labels_a, &labels_b).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
fn observed_agreement(labels_a: Vec<String>, labels_b: Vec<String>) -> PyResult<f64> {
    stats::observed_agreement(&labels_a, &labels_b)
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
fn spearman(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<f64> {
    stats::spearman(&xs, &ys).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// SHA-256 hex digest of a text, as used for prompt-prefix hashes.
#[pyfunction]
fn hash_text(text: &str) -> String {
    secagent_eval::backend::hash_text(text)
}

/// Deterministic per-episode sampling seed.
#[pyfunction]
fn assign_seed(task_id: &str, seed_index: u64) -> u64 {
    util::assign_seed(task_id, seed_index)
}

/// Parses one model reply under the strict action grammar. Returns a dict
/// with `kind` = "tool_call" or "final"; raises ValueError on grammar
/// failures with the failure reason in the message.
#[pyfunction]
fn parse_action(py: Python<'_>, text: &str) -> PyResult<Py<PyDict>> {
    match controller::parse_action(text) {
        Ok(Action::ToolCall {
            request,
            declared_phase,
        }) => {
            let d = PyDict::new_bound(py);
            d.set_item("kind", "tool_call")?;
            d.set_item("tool", request.tool.as_str())?;
            let args: HashMap<String, String> = request.args.into_iter().collect();
            d.set_item("args", args)?;
            d.set_item("phase", declared_phase)?;
            Ok(d.into())
        }
        Ok(Action::Final {
            artifact_name,
            artifact_content,
            declared_phase,
        }) => {
            let d = PyDict::new_bound(py);
            d.set_item("kind", "final")?;
            d.set_item("artifact_name", artifact_name)?;
            d.set_item("content", artifact_content)?;
            d.set_item("phase", declared_phase)?;
            Ok(d.into())
        }
        Err(failure) => Err(PyValueError::new_err(format!(
            "{:?}: {}",
            failure.reason, failure.detail
        ))),
    }
}

/// Loads a catalog file and returns (task summaries, catalog hash).
#[pyfunction]
fn load_catalog(py: Python<'_>, path: &str) -> PyResult<(Py<PyList>, String)> {
    let catalog =
        catalog::load_catalog(Path::new(path)).map_err(|e| PyIOError::new_err(e.to_string()))?;
    let list = PyList::empty_bound(py);
    for m in &catalog.manifests {
        let d = PyDict::new_bound(py);
        d.set_item("task_id", &m.task_id)?;
        d.set_item("task_class", m.task_class.name())?;
        d.set_item("fixture_dir", &m.fixture_dir)?;
        d.set_item("expected_artifacts", m.expected_artifacts.clone())?;
        list.append(d)?;
    }
    Ok((list.into(), catalog.hash))
}

/// Validates a catalog file; returns violation strings (empty = valid).
#[pyfunction]
fn validate_catalog(path: &str) -> PyResult<Vec<String>> {
    let catalog =
        catalog::load_catalog(Path::new(path)).map_err(|e| PyIOError::new_err(e.to_string()))?;
    Ok(catalog::validate_catalog(&catalog)
        .iter()
        .map(|v| v.to_string())
        .collect())
}

/// Runs the deterministic analysis pass over a JSON array of traces and
/// returns the analysis as a JSON string.
#[pyfunction]
fn analyze_traces_json(traces_json: &str) -> PyResult<String> {
    let traces: Vec<trace::Trace> =
        serde_json::from_str(traces_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let analysis = cli::analyze_traces(&traces);
    serde_json::to_string_pretty(&analysis).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Maps the 0–5 deterministic grounding score to the audit's four bins.
#[pyfunction]
fn grounding_bin(total: u8) -> u8 {
    report::grounding_bin(total)
}

/// True when the text matches the built-in refusal lexicon.
#[pyfunction]
fn is_refusal_text(text: &str) -> bool {
    trace::default_refusal_lexicon().matches(text)
}

#[pymodule]
fn secagent_eval_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(mcnemar_exact, m)?)?;
    m.add_function(wrap_pyfunction!(sign_permutation, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_ci, m)?)?;
    m.add_function(wrap_pyfunction!(cohen_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(observed_agreement, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(hash_text, m)?)?;
    m.add_function(wrap_pyfunction!(assign_seed, m)?)?;
    m.add_function(wrap_pyfunction!(parse_action, m)?)?;
    m.add_function(wrap_pyfunction!(load_catalog, m)?)?;
    m.add_function(wrap_pyfunction!(validate_catalog, m)?)?;
    m.add_function(wrap_pyfunction!(analyze_traces_json, m)?)?;
    m.add_function(wrap_pyfunction!(grounding_bin, m)?)?;
    m.add_function(wrap_pyfunction!(is_refusal_text, m)?)?;
    m.add("HARNESS_VERSION", secagent_eval::HARNESS_VERSION)?;
    Ok(())
}
