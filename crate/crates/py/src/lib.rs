use household_tom::fixtures;
use household_tom::gen::{self, GenConfig, Polarity, Question};
use household_tom::harness::{self, Prediction, RunConfig, ScorerChoice};
use household_tom::limp::{self, OracleScorer as CoreScorer, ScoringParams};
use household_tom::plan;
use household_tom::world::{self, PrimitiveAction};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyModule;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = match obj.extract::<String>() {
        Ok(s) => s,
        Err(_) => obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?,
    };
    serde_json::from_str(&text).map_err(err)
}

/// Generated dataset held in memory.
#[pyclass(module = "household_tom", frozen)]
struct Dataset {
    inner: gen::Dataset,
}

#[pymethods]
impl Dataset {
    #[getter]
    fn scenario_count(&self) -> usize {
        self.inner.scenarios.len()
    }

    #[getter]
    fn question_count(&self) -> usize {
        self.inner.questions.len()
    }

    /// Questions as dicts, in file order.
    fn questions<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.questions)
    }

    fn manifest<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.manifest)
    }

    fn to_jsonl(&self) -> String {
        self.inner.to_jsonl()
    }

    fn manifest_json(&self) -> String {
        self.inner.manifest_json()
    }

    fn __len__(&self) -> usize {
        self.inner.questions.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(scenarios={}, questions={})",
            self.inner.scenarios.len(),
            self.inner.questions.len()
        )
    }
}

#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (seed=42, scenarios=None, per_type=None, beta=None, tau=None, horizon=None, margin=None))]
fn generate(
    py: Python<'_>,
    seed: u64,
    scenarios: Option<usize>,
    per_type: Option<usize>,
    beta: Option<f64>,
    tau: Option<f64>,
    horizon: Option<u32>,
    margin: Option<f64>,
) -> PyResult<Dataset> {
    let d = GenConfig::default();
    let config = GenConfig {
        scenarios: scenarios.unwrap_or(d.scenarios),
        per_type: per_type.unwrap_or(d.per_type),
        beta: beta.unwrap_or(d.beta),
        tau: tau.unwrap_or(d.tau),
        horizon: horizon.unwrap_or(d.horizon),
        margin: margin.unwrap_or(d.margin),
        ..d
    };
    let inner = py.detach(|| gen::build_dataset(seed, &config)).map_err(err)?;
    Ok(Dataset { inner })
}

/// Exact scorer that replays the generator's forward model.
#[pyclass(module = "household_tom", frozen)]
struct OracleScorer {
    choice: ScorerChoice,
    core: CoreScorer,
}

#[pymethods]
impl OracleScorer {
    #[new]
    #[pyo3(signature = (beta=None, tau=None))]
    fn new(beta: Option<f64>, tau: Option<f64>) -> Self {
        let mut cfg = RunConfig::default();
        cfg.beta = beta.unwrap_or(cfg.beta);
        cfg.tau = tau.unwrap_or(cfg.tau);
        let params = ScoringParams {
            beta: cfg.beta,
            tau: cfg.tau,
        };
        OracleScorer {
            choice: ScorerChoice::Oracle(CoreScorer::with_budget(params, cfg.budget())),
            core: CoreScorer::with_budget(params, cfg.budget()),
        }
    }

    /// Answer one question given as a dict or JSON string.
    fn predict<'py>(&self, py: Python<'py>, question: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let q: Question = from_py(question)?;
        let p: Prediction = py.detach(|| harness::predict(&q, &self.choice));
        to_py(py, &p)
    }

    /// Full posterior with per-step likelihood ledger.
    fn posterior<'py>(&self, py: Python<'py>, question: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let q: Question = from_py(question)?;
        let r = py.detach(|| gen::oracle_posterior(&q, &self.core)).map_err(err)?;
        to_py(py, &r)
    }

    #[pyo3(signature = (question, margin=2.0))]
    fn verify(&self, py: Python<'_>, question: &Bound<'_, PyAny>, margin: f64) -> PyResult<bool> {
        let q: Question = from_py(question)?;
        py.detach(|| gen::verify_with_oracle(&q, &self.core, margin)).map_err(err)
    }
}

/// Merge a text channel and an observation channel into one timeline.
#[pyfunction]
fn fuse<'py>(py: Python<'py>, text_channel: Vec<String>, observation_channel: Vec<String>) -> PyResult<Bound<'py, PyAny>> {
    let fused = limp::fuse(&text_channel, &observation_channel).map_err(err)?;
    to_py(py, &fused)
}

/// Starting place of every object whose first recorded touch is a grab.
#[pyfunction]
fn retrieve_initial_state<'py>(py: Python<'py>, actions: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let actions: Vec<PrimitiveAction> = from_py(actions)?;
    to_py(py, &limp::retrieve_initial_state(&actions).map_err(err)?)
}

#[pyfunction]
fn boltzmann(q: Vec<f64>, beta: f64) -> Vec<f64> {
    plan::boltzmann(&q, beta)
}

/// Index picked under a polarity, and whether it tied.
#[pyfunction]
fn choose(polarity: &str, posterior: Vec<f64>) -> PyResult<(usize, bool)> {
    let p = match polarity.to_ascii_lowercase().as_str() {
        "most" => Polarity::Most,
        "least" => Polarity::Least,
        other => return Err(err(format!("unknown polarity {other}"))),
    };
    let a = limp::choose(p, &posterior);
    Ok((a.index, a.tie))
}

/// Score JSONL predictions against a JSONL dataset.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, dataset_jsonl: &str, predictions_jsonl: &str) -> PyResult<Bound<'py, PyAny>> {
    let data = harness::parse_dataset(dataset_jsonl).map_err(err)?;
    let preds: Vec<Prediction> = predictions_jsonl
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()
        .map_err(err)?;
    to_py(py, &harness::evaluate(&data.questions, &preds).map_err(err)?)
}

#[pyfunction]
fn apartment_ids() -> Vec<String> {
    world::Apartment::templates().into_iter().map(|a| a.id).collect()
}

#[pyfunction]
fn apartment<'py>(py: Python<'py>, id: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &world::Apartment::template(id).map_err(err)?)
}

/// The four hand-built example questions.
#[pyfunction]
fn showcase_questions<'py>(py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &fixtures::showcase_questions().map_err(err)?)
}

#[pymodule]
#[pyo3(name = "household_tom")]
fn py_household_tom(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("PLACEHOLDER", household_tom::channel::PLACEHOLDER)?;
    m.add_class::<Dataset>()?;
    m.add_class::<OracleScorer>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(retrieve_initial_state, m)?)?;
    m.add_function(wrap_pyfunction!(boltzmann, m)?)?;
    m.add_function(wrap_pyfunction!(choose, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(apartment_ids, m)?)?;
    m.add_function(wrap_pyfunction!(apartment, m)?)?;
    m.add_function(wrap_pyfunction!(showcase_questions, m)?)?;
    Ok(())
}
