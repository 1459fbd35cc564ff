//! Python module `cohhgn`: synthetic data, ingestion, training and the
//! ranking metrics, with configurations passed as JSON objects.

use cohhgn_core::data::{ingest as ingest_records, parse_records, write_records, IngestConfig, Schema};
use cohhgn_core::error::Category;
use cohhgn_core::evaluation::{self, evaluate, Markov, Popularity};
use cohhgn_core::graph::GraphSet;
use cohhgn_core::model::gradcheck::run_toy;
use cohhgn_core::model::Model;
use cohhgn_core::synthgen::{generate, SynthConfig};
use cohhgn_core::trainer::{train, TrainConfig};
use cohhgn_core::Error;
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde_json::{json, Value};

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match (e.category(), &e) {
        (_, Error::File { .. } | Error::Io(_)) => PyIOError::new_err(msg),
        (Category::Numeric, _) => PyArithmeticError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn parse_config<T: Default + serde::de::DeserializeOwned>(json: Option<&str>) -> PyResult<T> {
    match json {
        None => Ok(T::default()),
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(format!("bad configuration: {e}"))),
    }
}

/// Synthetic purchase log as CSV text. `config` is a JSON object with any
/// subset of the generator fields.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn synth(py: Python<'_>, config: Option<&str>) -> PyResult<String> {
    let config: SynthConfig = parse_config(config)?;
    let records = py.detach(|| generate(&config)).map_err(to_py)?;
    let mut buf = Vec::new();
    write_records(&records, &mut buf, &Schema::default()).map_err(to_py)?;
    String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Segments, filters and splits a CSV log. Returns the session counts and
/// vocabulary sizes.
#[pyfunction]
#[pyo3(signature = (csv_text, config=None))]
fn ingest<'py>(py: Python<'py>, csv_text: &str, config: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let config: IngestConfig = parse_config(config)?;
    let data = py
        .detach(|| {
            let records = parse_records(csv_text.as_bytes(), &Schema::default())?;
            ingest_records(&records, &config)
        })
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("train", data.split.train.len())?;
    out.set_item("validation", data.split.validation.len())?;
    out.set_item("test", data.split.test.len())?;
    out.set_item("n_items", data.vocab.items.len())?;
    out.set_item("train_week_max", data.split.train_week_max)?;
    out.set_item("test_week_min", data.split.test_week_min)?;
    Ok(out)
}

/// Ingests, builds graphs, trains and evaluates on the test split. Returns
/// a JSON document with the training log and the model and baseline metrics.
#[pyfunction]
#[pyo3(signature = (csv_text, ingest_config=None, train_config=None, ks=vec![10, 20]))]
fn run_pipeline(
    py: Python<'_>,
    csv_text: &str,
    ingest_config: Option<&str>,
    train_config: Option<&str>,
    ks: Vec<usize>,
) -> PyResult<String> {
    let ingest_config: IngestConfig = parse_config(ingest_config)?;
    let mut train_config: TrainConfig = parse_config(train_config)?;
    train_config.n_price_bins = ingest_config.n_price_bins;
    let doc = py
        .detach(|| -> cohhgn_core::Result<Value> {
            let records = parse_records(csv_text.as_bytes(), &Schema::default())?;
            let data = ingest_records(&records, &ingest_config)?;
            let graphs = GraphSet::build(&data.split.train, &data.vocab, train_config.epsilon, train_config.top_n)?;
            let out = train(&data.split, &data.vocab, &graphs, &train_config)?;
            let model = Model::new(out.best, &graphs)?;
            let n = data.vocab.items.len();
            let test = &data.split.test;
            let report = |r: evaluation::EvalReport| -> cohhgn_core::Result<Value> {
                Ok(serde_json::from_str(&r.to_json()?)?)
            };
            Ok(json!({
                "best_epoch": out.best_epoch,
                "log": out.log,
                "model": report(evaluate(&model, test, &ks)?)?,
                "popularity": report(evaluate(&Popularity::fit(&data.split.train, n), test, &ks)?)?,
                "markov": report(evaluate(&Markov::fit(&data.split.train, n), test, &ks)?)?,
            }))
        })
        .map_err(to_py)?;
    serde_json::to_string(&doc).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Gradient check on the built-in toy problem: `(passed, max_relative_error)`.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn gradcheck(py: Python<'_>, seed: u64) -> PyResult<(bool, f64)> {
    let report = py.detach(|| run_toy(seed)).map_err(to_py)?;
    Ok((report.passed(), report.max_rel_error()))
}

/// 1-based rank of `label`; ties are broken toward the lower index.
#[pyfunction]
fn rank_of(scores: Vec<f64>, label: usize) -> PyResult<usize> {
    check_label(&scores, label)?;
    Ok(evaluation::rank_of(&scores, label))
}

#[pyfunction]
fn precision_at_k(scores: Vec<f64>, label: usize, k: usize) -> PyResult<f64> {
    check_label(&scores, label)?;
    Ok(evaluation::precision_at_k(&scores, label, k))
}

#[pyfunction]
fn mrr_at_k(scores: Vec<f64>, label: usize, k: usize) -> PyResult<f64> {
    check_label(&scores, label)?;
    Ok(evaluation::mrr_at_k(&scores, label, k))
}

fn check_label(scores: &[f64], label: usize) -> PyResult<()> {
    if label >= scores.len() {
        return Err(PyValueError::new_err(format!("label {label} out of range for {} scores", scores.len())));
    }
    Ok(())
}

#[pymodule]
pub fn cohhgn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(ingest, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(rank_of, m)?)?;
    m.add_function(wrap_pyfunction!(precision_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(mrr_at_k, m)?)?;
    Ok(())
}
