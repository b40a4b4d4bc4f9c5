//! Python bindings: suites, scripted experiments, reward matrices and
//! pass^k, digests and IRMA reformulations.

use std::collections::BTreeSet;
use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;

use tcbench::env::{self, DomainDb};
use tcbench::metrics::{self, format_score};
use tcbench::runner::{self, RunConfig, ScriptFile, ScriptedProviders};
use tcbench::strategies::{self, Ablation, ConstraintChecklist, IrmaMemory, StrategyKind, ToolSuggestion, ToolSuggestionList};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Converts through JSON so Python sees plain dicts and lists.
fn to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(value_error)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn fraction(py: Python<'_>, value: &num_rational::BigRational) -> PyResult<Py<PyAny>> {
    let numer = value.numer().clone().into_pyobject(py)?;
    let denom = value.denom().clone().into_pyobject(py)?;
    Ok(py.import("fractions")?.getattr("Fraction")?.call1((numer, denom))?.unbind())
}

#[pyclass(name = "TaskSuite", frozen)]
struct PyTaskSuite {
    inner: env::TaskSuite,
}

#[pymethods]
impl PyTaskSuite {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = env::load_task_suite(&path).map_err(|e| match e {
            env::SuiteError::Io { .. } => PyOSError::new_err(e.to_string()),
            other => value_error(other),
        })?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: env::parse_task_suite(text).map_err(value_error)?,
        })
    }

    #[getter]
    fn domain(&self) -> &str {
        &self.inner.domain
    }

    #[getter]
    fn task_ids(&self) -> Vec<String> {
        self.inner.tasks.iter().map(|t| t.id.clone()).collect()
    }

    #[getter]
    fn tool_names(&self) -> Vec<String> {
        self.inner.tools.iter().map(|t| t.name.clone()).collect()
    }

    fn gold_digest(&self, task_id: &str) -> PyResult<String> {
        let task = self
            .inner
            .task(task_id)
            .ok_or_else(|| PyValueError::new_err(format!("no task \"{task_id}\"")))?;
        Ok(task.gold_db_digest.to_hex())
    }

    fn initial_db(&self, py: Python<'_>, task_id: &str) -> PyResult<Py<PyAny>> {
        let task = self
            .inner
            .task(task_id)
            .ok_or_else(|| PyValueError::new_err(format!("no task \"{task_id}\"")))?;
        to_py(py, &task.initial_db)
    }

    fn __len__(&self) -> usize {
        self.inner.tasks.len()
    }

    fn __repr__(&self) -> String {
        format!("TaskSuite(domain={:?}, tasks={})", self.inner.domain, self.inner.tasks.len())
    }
}

#[pyclass(name = "RewardMatrix", frozen)]
struct PyRewardMatrix {
    inner: metrics::RewardMatrix,
}

#[pymethods]
impl PyRewardMatrix {
    /// `rows` are `(task_id, n, c)` triples.
    #[new]
    fn new(rows: Vec<(String, u32, u32)>) -> PyResult<Self> {
        let inner = metrics::RewardMatrix::from_rows(rows);
        inner.check().map_err(value_error)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: metrics::RewardMatrix = serde_json::from_str(text).map_err(value_error)?;
        inner.check().map_err(value_error)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("matrix serializes")
    }

    #[getter]
    fn rows(&self) -> Vec<(String, u32, u32)> {
        self.inner.rows.iter().map(|r| (r.task_id.clone(), r.n, r.c)).collect()
    }

    #[getter]
    fn strategy(&self) -> Option<String> {
        self.inner.strategy.clone()
    }

    /// Exact pass^k as a `fractions.Fraction`.
    fn pass_hat_k(&self, py: Python<'_>, k: u32) -> PyResult<Py<PyAny>> {
        fraction(py, &metrics::pass_hat_k(&self.inner, k).map_err(value_error)?)
    }

    /// pass^k rounded half-even to four decimals.
    fn score(&self, k: u32) -> PyResult<String> {
        Ok(format_score(&metrics::pass_hat_k(&self.inner, k).map_err(value_error)?))
    }

    fn report(&self, py: Python<'_>, k_max: u32) -> PyResult<Py<PyAny>> {
        let report = metrics::pass_hat_k_report(&self.inner, k_max, &[]).map_err(value_error)?;
        to_py(py, &report.to_json())
    }

    fn filter(&self, exclude: Vec<String>) -> Self {
        let ex: BTreeSet<String> = exclude.into_iter().collect();
        Self {
            inner: metrics::filter_tasks(&self.inner, &ex),
        }
    }

    fn __len__(&self) -> usize {
        self.inner.rows.len()
    }

    fn __repr__(&self) -> String {
        format!("RewardMatrix(tasks={}, successes={})", self.inner.rows.len(), self.inner.successes())
    }
}

/// Runs a scripted experiment and returns the matrix and the
/// trajectories (as dicts, timestamps zeroed).
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (suite, scripts, strategy = "react", trials = 1, seed = 0, parallelism = 1, max_turns = 30))]
fn run_scripted(
    py: Python<'_>,
    suite: &PyTaskSuite,
    scripts: PathBuf,
    strategy: &str,
    trials: usize,
    seed: u64,
    parallelism: usize,
    max_turns: usize,
) -> PyResult<(PyRewardMatrix, Py<PyAny>)> {
    let file = ScriptFile::load(&scripts).map_err(value_error)?;
    let config = RunConfig {
        strategy: strategy.parse::<StrategyKind>().map_err(value_error)?,
        n_trials: trials,
        seed,
        parallelism,
        max_turns,
        ..RunConfig::default()
    };
    let factory = ScriptedProviders::new(file);
    let (matrix, mut trajectories) = py
        .detach(|| runner::run_experiment(&suite.inner, &factory, &config))
        .map_err(value_error)?;
    trajectories.iter_mut().for_each(runner::Trajectory::normalize_timestamps);
    Ok((PyRewardMatrix { inner: matrix }, to_py(py, &trajectories)?))
}

/// Canonical text of a JSON document.
#[pyfunction]
fn canonical_json(text: &str) -> PyResult<String> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(value_error)?;
    Ok(env::canonical_json(&value))
}

/// Hex digest of a database document `{collections, mutable_collections}`.
#[pyfunction]
#[pyo3(signature = (db_json, mutable_only = true))]
fn db_hash(db_json: &str, mutable_only: bool) -> PyResult<String> {
    let db: DomainDb = serde_json::from_str(db_json).map_err(value_error)?;
    Ok(env::db_hash(&db, mutable_only).to_hex())
}

/// Unweighted mean of per-domain scores given as decimal strings.
#[pyfunction]
fn overall_score(py: Python<'_>, scores: Vec<String>) -> PyResult<Py<PyAny>> {
    let parsed = scores
        .iter()
        .map(|s| metrics::parse_decimal(s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(value_error)?;
    let mean = metrics::overall_score(&parsed).ok_or_else(|| PyValueError::new_err("no scores"))?;
    fraction(py, &mean)
}

/// Renders an IRMA input; `None` disables a block.
#[pyfunction]
#[pyo3(signature = (query, memory = None, constraints = None, tools = None))]
fn render_reformulation(
    query: &str,
    memory: Option<Vec<String>>,
    constraints: Option<Vec<String>>,
    tools: Option<Vec<(String, String)>>,
) -> String {
    let memory = memory.map(|entries| IrmaMemory { entries });
    let constraints = constraints.map(|items| ConstraintChecklist { items, none_flag: false });
    let tools = tools.map(|t| ToolSuggestionList {
        items: t.into_iter().map(|(name, reason)| ToolSuggestion { name, reason }).collect(),
    });
    strategies::irma_reformulate(query, memory.as_ref(), constraints.as_ref(), tools.as_ref()).render()
}

#[pyfunction]
fn parse_reformulated(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    to_py(py, &strategies::parse_reformulated(text).map_err(PyValueError::new_err)?)
}

#[pyfunction]
fn ablation_labels() -> Vec<String> {
    Ablation::configurations().iter().map(Ablation::label).collect()
}

#[pymodule]
fn tcbench_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTaskSuite>()?;
    m.add_class::<PyRewardMatrix>()?;
    m.add_function(wrap_pyfunction!(run_scripted, m)?)?;
    m.add_function(wrap_pyfunction!(canonical_json, m)?)?;
    m.add_function(wrap_pyfunction!(db_hash, m)?)?;
    m.add_function(wrap_pyfunction!(overall_score, m)?)?;
    m.add_function(wrap_pyfunction!(render_reformulation, m)?)?;
    m.add_function(wrap_pyfunction!(parse_reformulated, m)?)?;
    m.add_function(wrap_pyfunction!(ablation_labels, m)?)?;
    Ok(())
}
