//! Python bindings: keyword labelling, shot retrieval over persisted banks,
//! execution-accuracy checks, and the batch commands.

use std::path::PathBuf;
use std::time::Duration;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sqldrill::bank::{self, DrillBank};
use sqldrill::cli;
use sqldrill::evaluator::{self, VesRecord};
use sqldrill::fixtures;
use sqldrill::gateway::{self, EmbeddingVector};
use sqldrill::inference;
use sqldrill::partitioner;
use sqldrill::retriever::{self, SelectionStrategy, StrategyKind};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Round-trips a serializable value through `json.loads`.
fn to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Returns `(labels, primary)` for a SQL statement.
#[pyfunction]
fn keyword_labels(sql: &str) -> PyResult<(Vec<String>, String)> {
    let labels = partitioner::extract_keyword_labels(sql).map_err(value_err)?;
    Ok((
        labels.labels.iter().map(|g| g.as_str().to_string()).collect(),
        labels.primary.as_str().to_string(),
    ))
}

#[pyfunction]
fn sim_syntactic(question: &str, other: &str) -> f64 {
    retriever::sim_syntactic(question, other)
}

#[pyfunction]
fn estimate_tokens(text: &str) -> usize {
    gateway::estimate_tokens(text)
}

#[pyfunction]
fn prompt_budget(context_limit: usize) -> usize {
    inference::prompt_budget(context_limit)
}

#[pyfunction]
fn extract_sql(completion: &str) -> PyResult<String> {
    bank::extract_sql(completion).map_err(value_err)
}

/// `records` holds `(correct, gold_time, pred_time)` triples.
#[pyfunction]
fn ves_score(records: Vec<(bool, f64, f64)>) -> f64 {
    let recs: Vec<VesRecord> = records
        .into_iter()
        .map(|(correct, gold_time, pred_time)| VesRecord {
            correct,
            gold_time,
            pred_time,
        })
        .collect();
    evaluator::ves_score(&recs)
}

#[pyclass(module = "sqldrill", frozen)]
struct Executor {
    inner: evaluator::Executor,
}

#[pymethods]
impl Executor {
    #[new]
    #[pyo3(signature = (timeout_secs = 30.0))]
    fn new(timeout_secs: f64) -> PyResult<Self> {
        if timeout_secs.is_nan() || timeout_secs <= 0.0 {
            return Err(PyValueError::new_err("timeout_secs must be positive"));
        }
        Ok(Executor {
            inner: evaluator::Executor::new(Duration::from_secs_f64(timeout_secs)),
        })
    }

    /// Runs one statement read-only; returns a dict with `status`, `rows`,
    /// `elapsed` and `error_text`.
    fn execute<'py>(&self, py: Python<'py>, db_file: PathBuf, sql: &str) -> PyResult<Bound<'py, PyAny>> {
        let out = py.detach(|| self.inner.execute(&db_file, sql));
        to_py(py, &out)
    }

    fn ex_correct(&self, py: Python<'_>, pred_sql: &str, gold_sql: &str, db_file: PathBuf) -> PyResult<bool> {
        py.detach(|| self.inner.ex_correct(pred_sql, gold_sql, "", &db_file))
            .map_err(value_err)
    }
}

#[pyclass(module = "sqldrill", name = "DrillBank", frozen)]
struct PyDrillBank {
    inner: DrillBank,
}

#[pymethods]
impl PyDrillBank {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyDrillBank {
            inner: bank::load_bank(&path).map_err(value_err)?,
        })
    }

    #[getter]
    fn group(&self) -> &'static str {
        self.inner.group.as_str()
    }

    #[getter]
    fn embedding_dimension(&self) -> usize {
        self.inner.embedding_dimension
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("DrillBank(group={:?}, entries={})", self.inner.group.as_str(), self.inner.len())
    }

    fn entries<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.entries)
    }

    /// Picks `k` shots for a question. `question_vec` is required by the
    /// semantic and mixed strategies.
    #[pyo3(signature = (question, question_vec = None, strategy = "mixed", k = 4, seed = 0))]
    fn select_shots<'py>(
        &self,
        py: Python<'py>,
        question: &str,
        question_vec: Option<Vec<f64>>,
        strategy: &str,
        k: usize,
        seed: u64,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let kind: StrategyKind = strategy.parse().map_err(value_err)?;
        let strategy = SelectionStrategy::new(kind, k, seed).map_err(value_err)?;
        let vec = EmbeddingVector::new(question_vec.unwrap_or_default());
        let shots = retriever::select_shots(&self.inner.entries, question, &vec, &strategy).map_err(value_err)?;
        shots
            .into_iter()
            .map(|s| {
                let d = PyDict::new(py);
                d.set_item("example_id", s.entry.example_id)?;
                d.set_item("question", s.entry.question)?;
                d.set_item("sql", s.entry.sql)?;
                d.set_item("score", s.score)?;
                d.set_item("rank", s.rank)?;
                d.set_item("source", format!("{:?}", s.source).to_lowercase())?;
                Ok(d)
            })
            .collect()
    }
}

/// Writes the bundled fixture corpus and returns its paths.
#[pyfunction]
fn write_fixture_corpus<'py>(py: Python<'py>, dir: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let paths = fixtures::write_fixture_corpus(&dir).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let d = PyDict::new(py);
    d.set_item("root", paths.root)?;
    d.set_item("tables", paths.tables)?;
    d.set_item("db_root", paths.db_root)?;
    d.set_item("train", paths.train)?;
    d.set_item("dev", paths.dev)?;
    Ok(d)
}

/// Runs a command line such as `["infer", "--config", "run.json"]` in
/// process and returns the exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> PyResult<i32> {
    Ok(py.detach(|| match cli::run_args(args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }))
}

#[pymodule(name = "sqldrill")]
fn sqldrill_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(keyword_labels, m)?)?;
    m.add_function(wrap_pyfunction!(sim_syntactic, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_tokens, m)?)?;
    m.add_function(wrap_pyfunction!(prompt_budget, m)?)?;
    m.add_function(wrap_pyfunction!(extract_sql, m)?)?;
    m.add_function(wrap_pyfunction!(ves_score, m)?)?;
    m.add_function(wrap_pyfunction!(write_fixture_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add_class::<Executor>()?;
    m.add_class::<PyDrillBank>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
