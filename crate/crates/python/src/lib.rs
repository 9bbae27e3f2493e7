//! Python bindings for the stereo-audit core.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use stereo_audit::augment::{self, ExportVariant, Verdict};
use stereo_audit::corpus::{self, McsbItem, Portion};
use stereo_audit::evaluator::{self, EvalConfig, EvalRecord};
use stereo_audit::lexicon::{self, SelectionRule};
use stereo_audit::metrics::{self, AggregateOptions, Denominator, Outcome};
use stereo_audit::modelgate::{BackendKind, BackendSpec, Gateway};
use stereo_audit::prompting::{self, PromptMode};
use stereo_audit::shell::{render_plot, render_table, Format};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_error(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr>(s: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(value_error)
}

/// A normalized multiple-choice item.
#[pyclass(module = "stereo_audit", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Item(McsbItem);

#[pymethods]
impl Item {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let item: McsbItem = serde_json::from_str(text).map_err(value_error)?;
        item.validate().map_err(value_error)?;
        Ok(Self(item))
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.0).expect("items serialize")
    }

    #[getter]
    fn id(&self) -> &str {
        &self.0.id
    }

    #[getter]
    fn source(&self) -> String {
        self.0.source.to_string()
    }

    #[getter]
    fn category(&self) -> String {
        self.0.category.to_string()
    }

    #[getter]
    fn context(&self) -> Option<&str> {
        self.0.context.as_deref()
    }

    /// `[(text, gold_label), ...]` in file order.
    #[getter]
    fn choices(&self) -> Vec<(String, String)> {
        self.0
            .choices
            .iter()
            .map(|c| (c.text.clone(), c.gold.as_str().to_string()))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("Item(id={:?}, category={:?})", self.0.id, self.0.category.to_string())
    }
}

/// One model answer for one item.
#[pyclass(module = "stereo_audit", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Record(EvalRecord);

#[pymethods]
impl Record {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text).map(Self).map_err(value_error)
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.0).expect("records serialize")
    }

    #[getter]
    fn item_id(&self) -> &str {
        &self.0.item_id
    }

    #[getter]
    fn category(&self) -> String {
        self.0.category.to_string()
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.0.mode.as_str()
    }

    #[getter]
    fn permutation(&self) -> Vec<usize> {
        self.0.permutation.clone()
    }

    #[getter]
    fn backend_id(&self) -> &str {
        &self.0.backend_id
    }

    #[getter]
    fn raw_text(&self) -> &str {
        &self.0.raw_text
    }

    /// `stereotype`, `anti_stereotype`, `unrelated` or `unparseable`.
    #[getter]
    fn outcome(&self) -> &'static str {
        Outcome::of_record(&self.0).as_str()
    }

    #[getter]
    fn error(&self) -> Option<&str> {
        self.0.error.as_deref()
    }

    fn __repr__(&self) -> String {
        format!("Record(item_id={:?}, outcome={:?})", self.0.item_id, self.outcome())
    }
}

fn unwrap_items(items: &[PyRef<'_, Item>]) -> Vec<McsbItem> {
    items.iter().map(|i| i.0.clone()).collect()
}

fn unwrap_records(records: &[PyRef<'_, Record>]) -> Vec<EvalRecord> {
    records.iter().map(|r| r.0.clone()).collect()
}

fn wrap_outcome(outcome: corpus::LoadOutcome) -> (Vec<Item>, usize) {
    let rejected = outcome.rejects.len();
    (outcome.items.into_iter().map(Item).collect(), rejected)
}

/// Loads a StereoSet JSON file. Returns `(items, rejected_count)`.
#[pyfunction]
#[pyo3(signature = (path, portion = "intersentence"))]
fn load_stereoset(path: PathBuf, portion: &str) -> PyResult<(Vec<Item>, usize)> {
    let portion: Portion = parse(portion)?;
    corpus::load_stereoset(&path, portion)
        .map(wrap_outcome)
        .map_err(value_error)
}

/// Loads a CrowS-Pairs CSV file. Returns `(items, rejected_count)`.
#[pyfunction]
fn load_crowspairs(path: PathBuf) -> PyResult<(Vec<Item>, usize)> {
    corpus::load_crowspairs(&path)
        .map(wrap_outcome)
        .map_err(value_error)
}

#[pyfunction]
fn read_items(path: PathBuf) -> PyResult<Vec<Item>> {
    let items = corpus::read_items(&path).map_err(value_error)?;
    Ok(items.into_iter().map(Item).collect())
}

#[pyfunction]
fn write_items(path: PathBuf, items: Vec<PyRef<'_, Item>>) -> PyResult<()> {
    corpus::write_items(&path, &unwrap_items(&items)).map_err(runtime_error)
}

#[pyfunction]
fn read_records(path: PathBuf) -> PyResult<Vec<Record>> {
    let records = evaluator::read_records(&path).map_err(value_error)?;
    Ok(records.into_iter().map(Record).collect())
}

#[pyfunction]
fn permutation_for(item_id: &str, seed: u64, n: usize) -> PyResult<Vec<usize>> {
    prompting::permutation_for(item_id, seed, n).map_err(value_error)
}

/// The chat messages for `item` as `[(role, content), ...]`.
#[pyfunction]
#[pyo3(signature = (item, mode = "implicit", seed = 0))]
fn build_transcript(item: PyRef<'_, Item>, mode: &str, seed: u64) -> PyResult<Vec<(String, String)>> {
    let mode: PromptMode = parse(mode)?;
    let perm = prompting::permutation_for(&item.0.id, seed, item.0.choices.len())
        .map_err(value_error)?;
    let transcript = prompting::build_transcript(&item.0, mode, &perm).map_err(value_error)?;
    Ok(transcript
        .turns
        .into_iter()
        .map(|t| (t.role.as_str().to_string(), t.content))
        .collect())
}

/// Evaluates items against a backend. HTTP backends read the API key from
/// the environment variable named by `auth_env`.
#[pyfunction]
#[pyo3(signature = (
    items, mode = "implicit", backend = "mock_gold", seed = 0, backend_seed = 0,
    parallelism = 4, model = None, endpoint = None, auth_env = None,
))]
#[allow(clippy::too_many_arguments)]
fn evaluate(
    py: Python<'_>,
    items: Vec<PyRef<'_, Item>>,
    mode: &str,
    backend: &str,
    seed: u64,
    backend_seed: u64,
    parallelism: usize,
    model: Option<String>,
    endpoint: Option<String>,
    auth_env: Option<String>,
) -> PyResult<Vec<Record>> {
    let mode: PromptMode = parse(mode)?;
    let kind: BackendKind = parse(backend)?;
    if parallelism == 0 {
        return Err(value_error("parallelism must be at least 1"));
    }
    let spec = BackendSpec {
        model_name: model,
        endpoint_url: endpoint,
        auth_ref: auth_env,
        seed: backend_seed,
        ..BackendSpec::mock(kind)
    };
    let gateway = Gateway::new(spec).map_err(value_error)?;
    let items = unwrap_items(&items);
    let config = EvalConfig {
        seed,
        parallelism,
        ..EvalConfig::default()
    };
    let records = py
        .detach(|| evaluator::evaluate(&items, mode, &gateway, &config, None))
        .map_err(runtime_error)?;
    Ok(records.into_iter().map(Record).collect())
}

fn stats_map(records: &[PyRef<'_, Record>], parseable_only: bool) -> PyResult<metrics::StatsMap> {
    let options = AggregateOptions {
        denominator: if parseable_only {
            Denominator::ParseableOnly
        } else {
            Denominator::All
        },
        ..AggregateOptions::default()
    };
    metrics::aggregate_with(&unwrap_records(records), &options).map_err(value_error)
}

/// Per-category stats: `{category: {"n", "excluded", "counts", "ratios", "ci"}}`.
#[pyfunction]
#[pyo3(signature = (records, parseable_only = false))]
fn aggregate<'py>(
    py: Python<'py>,
    records: Vec<PyRef<'py, Record>>,
    parseable_only: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let stats = stats_map(&records, parseable_only)?;
    let out = PyDict::new(py);
    for (category, s) in &stats {
        let counts = PyDict::new(py);
        let ratios = PyDict::new(py);
        let ci = PyDict::new(py);
        for outcome in Outcome::ALL {
            counts.set_item(outcome.as_str(), s.counts.get(outcome))?;
            ratios.set_item(outcome.as_str(), s.ratios.get(outcome))?;
            ci.set_item(outcome.as_str(), s.ci.get(outcome))?;
        }
        let entry = PyDict::new(py);
        entry.set_item("n", s.n)?;
        entry.set_item("excluded", s.excluded)?;
        entry.set_item("counts", counts)?;
        entry.set_item("ratios", ratios)?;
        entry.set_item("ci", ci)?;
        out.set_item(category.to_string(), entry)?;
    }
    Ok(out)
}

/// Renders the per-category table as `markdown`, `csv` or `json`.
#[pyfunction]
#[pyo3(signature = (records, format = "markdown", parseable_only = false))]
fn render_stats(records: Vec<PyRef<'_, Record>>, format: &str, parseable_only: bool) -> PyResult<String> {
    let format: Format = parse(format)?;
    let stats = stats_map(&records, parseable_only)?;
    render_table(&stats, format).map_err(value_error)
}

/// Renders the per-category stacked bar chart as SVG.
#[pyfunction]
#[pyo3(signature = (records, parseable_only = false))]
fn render_svg(records: Vec<PyRef<'_, Record>>, parseable_only: bool) -> PyResult<String> {
    let stats = stats_map(&records, parseable_only)?;
    render_plot(&stats).map_err(value_error)
}

#[pyfunction]
#[pyo3(signature = (successes, n, z = 1.96))]
fn wilson_ci(successes: u64, n: u64, z: f64) -> PyResult<(f64, f64)> {
    metrics::wilson_ci(successes, n, z).map_err(value_error)
}

/// Pooled top-k log-odds tokens as
/// `{"toward": [(token, score)], "away": [(token, score)]}`.
#[pyfunction]
#[pyo3(signature = (records, items, k = 10, alpha = 1.0, rule = "by_mode"))]
fn log_odds<'py>(
    py: Python<'py>,
    records: Vec<PyRef<'py, Record>>,
    items: Vec<PyRef<'py, Item>>,
    k: usize,
    alpha: f64,
    rule: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let rule: SelectionRule = parse(rule)?;
    let report = lexicon::build_lexicon_report(
        &unwrap_records(&records),
        &unwrap_items(&items),
        rule,
        k,
        alpha,
    )
    .map_err(value_error)?;
    let pairs = |list: &[lexicon::ScoredToken]| -> Vec<(String, f64)> {
        list.iter().map(|t| (t.token.clone(), t.score)).collect()
    };
    let out = PyDict::new(py);
    out.set_item("toward", pairs(&report.all.toward))?;
    out.set_item("away", pairs(&report.all.away))?;
    Ok(out)
}

/// `None` for an acceptable paraphrase, otherwise the rejection reason.
#[pyfunction]
fn validate_paraphrase(original: &str, candidate: &str) -> Option<String> {
    match augment::validate_paraphrase(original, candidate) {
        Verdict::Valid => None,
        Verdict::Invalid(reason) => Some(reason.to_string()),
    }
}

/// Fine-tuning examples as JSONL lines, one per item.
#[pyfunction]
#[pyo3(signature = (items, mode = "implicit", variant = "plain", bow_words = None))]
fn export_finetune(
    items: Vec<PyRef<'_, Item>>,
    mode: &str,
    variant: &str,
    bow_words: Option<Vec<String>>,
) -> PyResult<Vec<String>> {
    let mode: PromptMode = parse(mode)?;
    let variant: ExportVariant = parse(variant)?;
    let examples = augment::export_finetune(&unwrap_items(&items), mode, variant, bow_words.as_deref())
        .map_err(value_error)?;
    Ok(examples
        .iter()
        .map(|e| serde_json::to_string(e).expect("examples serialize"))
        .collect())
}

#[pymodule(name = "stereo_audit")]
fn stereo_audit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Item>()?;
    m.add_class::<Record>()?;
    m.add_function(wrap_pyfunction!(load_stereoset, m)?)?;
    m.add_function(wrap_pyfunction!(load_crowspairs, m)?)?;
    m.add_function(wrap_pyfunction!(read_items, m)?)?;
    m.add_function(wrap_pyfunction!(write_items, m)?)?;
    m.add_function(wrap_pyfunction!(read_records, m)?)?;
    m.add_function(wrap_pyfunction!(permutation_for, m)?)?;
    m.add_function(wrap_pyfunction!(build_transcript, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(render_stats, m)?)?;
    m.add_function(wrap_pyfunction!(render_svg, m)?)?;
    m.add_function(wrap_pyfunction!(wilson_ci, m)?)?;
    m.add_function(wrap_pyfunction!(log_odds, m)?)?;
    m.add_function(wrap_pyfunction!(validate_paraphrase, m)?)?;
    m.add_function(wrap_pyfunction!(export_finetune, m)?)?;
    Ok(())
}
