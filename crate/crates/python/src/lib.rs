//! Python module `pee`: the pipeline commands and the text metrics.
//!
//! Bad input raises `ValueError`, anything else `RuntimeError`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use pee_core::config::Config;
use pee_core::pipeline::{self, Candidates};
use pee_core::{corpus, losses, metrics, Error};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    if e.is_user_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn load_config(path: Option<&str>, seed: Option<u64>) -> PyResult<Config> {
    let mut config = match path {
        Some(p) => Config::load(p).map_err(to_py)?,
        None => Config::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

fn opt_path(p: &Option<String>) -> Option<&Path> {
    p.as_deref().map(Path::new)
}

#[pyfunction]
pub fn tokenize(text: &str) -> Vec<String> {
    corpus::tokenize(text)
}

/// Corpus-level BLEU-n on a 0..100 scale.
#[pyfunction]
pub fn bleu(candidates: Vec<Vec<String>>, references: Vec<Vec<String>>, n: usize) -> PyResult<f64> {
    if candidates.len() != references.len() {
        return Err(PyValueError::new_err(format!(
            "{} candidates for {} references",
            candidates.len(),
            references.len()
        )));
    }
    if !(1..=4).contains(&n) {
        return Err(PyValueError::new_err(format!("n must be in 1..=4, got {n}")));
    }
    Ok(metrics::bleu_n(&candidates, &references, n))
}

#[pyfunction]
pub fn f1(candidate: Vec<String>, reference: Vec<String>) -> f64 {
    metrics::f1_tokens(&candidate, &reference)
}

#[pyfunction]
pub fn jaccard(a: Vec<String>, b: Vec<String>) -> f64 {
    let a: BTreeSet<String> = a.into_iter().collect();
    let b: BTreeSet<String> = b.into_iter().collect();
    losses::jaccard(&a, &b)
}

/// The default configuration as TOML.
#[pyfunction]
pub fn default_config() -> String {
    Config::default().to_toml()
}

/// Trains the topic model; returns the per-epoch mean loss.
#[pyfunction]
#[pyo3(signature = (out, config=None, corpora=Vec::new(), seed=None))]
pub fn pretrain_topic(
    out: String,
    config: Option<String>,
    corpora: Vec<String>,
    seed: Option<u64>,
) -> PyResult<Vec<f64>> {
    let config = load_config(config.as_deref(), seed)?;
    let corpora: Vec<PathBuf> = corpora.into_iter().map(PathBuf::from).collect();
    let trace =
        pipeline::cmd_pretrain_topic(&config, &corpora, Path::new(&out), &mut std::io::sink()).map_err(to_py)?;
    Ok(trace.into_iter().map(|r| r.loss).collect())
}

type ExpansionRecords = Vec<(usize, Vec<(String, f64)>)>;

/// One `(conversation, [(word, score), ...])` pair per conversation.
#[pyfunction]
#[pyo3(signature = (topic, config=None, data=None))]
pub fn expand(topic: String, config: Option<String>, data: Option<String>) -> PyResult<ExpansionRecords> {
    let config = load_config(config.as_deref(), None)?;
    let records =
        pipeline::cmd_expand(&config, Path::new(&topic), opt_path(&data), &mut std::io::sink()).map_err(to_py)?;
    Ok(records.into_iter().map(|r| (r.conversation, r.words)).collect())
}

/// Trains the generator; returns the per-epoch mean training loss.
#[pyfunction]
#[pyo3(signature = (out, config=None, expansions=None, valid_expansions=None, seed=None))]
pub fn train(
    out: String,
    config: Option<String>,
    expansions: Option<String>,
    valid_expansions: Option<String>,
    seed: Option<u64>,
) -> PyResult<Vec<f64>> {
    let config = load_config(config.as_deref(), seed)?;
    let (_, outcome) = pipeline::cmd_train(
        &config,
        opt_path(&expansions),
        opt_path(&valid_expansions),
        Path::new(&out),
        &mut std::io::sink(),
    )
    .map_err(to_py)?;
    Ok(outcome.epochs.iter().map(|e| e.train.loss).collect())
}

/// One response string per example of `data`.
#[pyfunction]
#[pyo3(signature = (checkpoint, config=None, data=None, expansions=None))]
pub fn generate(
    checkpoint: String,
    config: Option<String>,
    data: Option<String>,
    expansions: Option<String>,
) -> PyResult<Vec<String>> {
    let config = load_config(config.as_deref(), None)?;
    let records = pipeline::cmd_generate(
        &config,
        Path::new(&checkpoint),
        opt_path(&data),
        opt_path(&expansions),
        false,
        &mut std::io::sink(),
    )
    .map_err(to_py)?;
    Ok(records.into_iter().map(|r| r.response).collect())
}

/// Scores either a checkpoint or a responses file against `data`.
#[pyfunction]
#[pyo3(signature = (config=None, checkpoint=None, responses=None, expansions=None, data=None))]
pub fn evaluate(
    config: Option<String>,
    checkpoint: Option<String>,
    responses: Option<String>,
    expansions: Option<String>,
    data: Option<String>,
) -> PyResult<BTreeMap<String, f64>> {
    let config = load_config(config.as_deref(), None)?;
    let candidates = match (&checkpoint, &responses) {
        (Some(c), None) => Candidates::Model {
            checkpoint: Path::new(c),
            expansions: opt_path(&expansions),
        },
        (None, Some(r)) => Candidates::Responses(Path::new(r)),
        _ => return Err(PyValueError::new_err("give exactly one of checkpoint or responses")),
    };
    let report = pipeline::cmd_eval(&config, candidates, opt_path(&data), &mut std::io::sink()).map_err(to_py)?;
    let value = serde_json::to_value(report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    serde_json::from_value(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn pee(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(f1, m)?)?;
    m.add_function(wrap_pyfunction!(jaccard, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain_topic, m)?)?;
    m.add_function(wrap_pyfunction!(expand, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
