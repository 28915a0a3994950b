//! Python bindings: tokenizers, objective formulas, metrics, dataset preparation, training and
//! evaluation.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyKeyError, PyTypeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyFloat, PyInt, PyString};

use advcode::corpus::{
    self, prepare_corpus, EncodedCorpus, Lang, PrepareOptions, PreparedCorpus, SyntheticCorpus, SyntheticSpec,
};
use advcode::evaluation::{self, EvalReport, QcPoolScorer, QdPoolScorer};
use advcode::model::{self, Checkpoint, ModelKind, ModelPayload};
use advcode::objectives::{self, RegWeights};
use advcode::training::{self, QcData, QdData, SampleRecord, TrainHistory};
use advcode::Error;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io { .. } => PyIOError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for advcode::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

// ---------------------------------------------------------------------------------------------
// formulas

#[pyfunction]
fn tokenize_nl(text: &str) -> Vec<String> {
    corpus::tokenize_nl(text)
}

#[pyfunction]
#[pyo3(signature = (code, lang = "python"))]
fn tokenize_code(code: &str, lang: &str) -> Vec<String> {
    corpus::tokenize_code(code, Lang::parse(lang))
}

#[pyfunction]
fn hinge_loss(f_pos: f64, f_neg: f64, margin: f64) -> f64 {
    objectives::hinge_loss(f_pos, f_neg, margin)
}

#[pyfunction]
fn adversarial_distribution(scores: Vec<f64>, tau: f64) -> PyResult<Vec<f64>> {
    objectives::adversarial_distribution(&scores, tau).py()
}

#[pyfunction]
fn normalize_relevance(cos_score: f64) -> f64 {
    objectives::normalize_relevance(cos_score)
}

#[pyfunction]
#[pyo3(signature = (x, a = 1, b = 1))]
fn qd_weight(x: f64, a: u32, b: u32) -> PyResult<f64> {
    objectives::qd_weight(x, RegWeights::new(a, b).py()?).py()
}

#[pyfunction]
fn average_precision(rank: usize) -> PyResult<f64> {
    evaluation::average_precision_single(rank).py()
}

#[pyfunction]
fn ndcg(rank: usize) -> PyResult<f64> {
    evaluation::ndcg_single(rank).py()
}

// ---------------------------------------------------------------------------------------------
// configuration

#[pyclass(name = "TrainConfig", module = "advcode_py", from_py_object)]
#[derive(Clone)]
struct PyTrainConfig {
    inner: training::TrainConfig,
}

fn to_json(value: &Bound<'_, PyAny>) -> PyResult<serde_json::Value> {
    if value.is_instance_of::<PyBool>() {
        Ok(serde_json::Value::Bool(value.extract()?))
    } else if value.is_instance_of::<PyInt>() {
        Ok(serde_json::Value::from(value.extract::<i64>()?))
    } else if value.is_instance_of::<PyFloat>() {
        Ok(serde_json::Value::from(value.extract::<f64>()?))
    } else if value.is_instance_of::<PyString>() {
        Ok(serde_json::Value::String(value.extract()?))
    } else {
        Err(PyTypeError::new_err(format!("unsupported config value {value}")))
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match value {
        serde_json::Value::Bool(b) => PyBool::new(py, *b).to_owned().into_any(),
        serde_json::Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        serde_json::Value::String(s) => s.into_pyobject(py)?.into_any(),
        _ => py.None().into_bound(py),
    })
}

impl PyTrainConfig {
    fn fields(&self) -> serde_json::Map<String, serde_json::Value> {
        match serde_json::to_value(&self.inner) {
            Ok(serde_json::Value::Object(map)) => map,
            _ => unreachable!("TrainConfig serializes to an object"),
        }
    }

    fn with(&self, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let Some(overrides) = overrides else {
            return Ok(self.clone());
        };
        let mut fields = self.fields();
        for (key, value) in overrides.iter() {
            let key: String = key.extract()?;
            if !fields.contains_key(&key) {
                return Err(PyKeyError::new_err(format!("unknown config field {key:?}")));
            }
            fields.insert(key, to_json(&value)?);
        }
        let inner: training::TrainConfig = serde_json::from_value(serde_json::Value::Object(fields))
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().py()?;
        Ok(Self { inner })
    }
}

#[pymethods]
impl PyTrainConfig {
    /// Defaults with any field overridden by keyword, e.g. `TrainConfig(max_epochs=10)`.
    #[new]
    #[pyo3(signature = (**overrides))]
    fn new(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        Self {
            inner: training::TrainConfig::default(),
        }
        .with(overrides)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: training::TrainConfig::from_toml(text).py()?,
        })
    }

    #[pyo3(signature = (**overrides))]
    fn replace(&self, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        self.with(overrides)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let dict = PyDict::new(py);
        for (k, v) in self.fields() {
            dict.set_item(k, json_to_py(py, &v)?)?;
        }
        Ok(dict)
    }

    fn __getattr__<'py>(&self, py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyAny>> {
        match self.fields().get(name) {
            Some(v) => json_to_py(py, v),
            None => Err(pyo3::exceptions::PyAttributeError::new_err(name.to_string())),
        }
    }

    fn __repr__(&self) -> String {
        format!("TrainConfig({:?})", self.inner)
    }
}

// ---------------------------------------------------------------------------------------------
// data

/// A prepared corpus: splits, vocabulary, fixed evaluation pools and encoded sequences.
#[pyclass(name = "Dataset", module = "advcode_py", frozen)]
struct PyDataset {
    prepared: PreparedCorpus,
    encoded: EncodedCorpus,
    synthetic: Option<SyntheticCorpus>,
}

impl PyDataset {
    fn build(
        qc: &[corpus::QCPair],
        qd: &[corpus::QDPair],
        seed: u64,
        pool_negatives: usize,
        config: Option<&PyTrainConfig>,
        synthetic: Option<SyntheticCorpus>,
    ) -> PyResult<Self> {
        let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
        let prepared = prepare_corpus(
            qc,
            qd,
            PrepareOptions {
                seed,
                pool_negatives,
                min_freq: cfg.min_freq,
                max_vocab: cfg.max_vocab,
            },
        )
        .py()?;
        let encoded = prepared.encode(cfg.limits());
        Ok(Self {
            prepared,
            encoded,
            synthetic,
        })
    }

    fn qc(&self, split: &str) -> PyResult<QcData<'_>> {
        let pools = &self.prepared.qc_pools;
        let (eval, eval_pools) = match split {
            "dev" => (&self.encoded.qc.dev, &pools.dev),
            "test" => (&self.encoded.qc.test, &pools.test),
            _ => return Err(PyValueError::new_err(format!("unknown split {split:?}"))),
        };
        Ok(QcData {
            train: &self.encoded.qc.train,
            dev: eval,
            dev_pools: eval_pools,
        })
    }

    fn qd(&self, split: &str) -> PyResult<Option<QdData<'_>>> {
        let Some(pools) = &self.prepared.qd_pools else {
            return Ok(None);
        };
        let (eval, eval_pools) = match split {
            "dev" => (&self.encoded.qd.dev, &pools.dev),
            "test" => (&self.encoded.qd.test, &pools.test),
            _ => return Err(PyValueError::new_err(format!("unknown split {split:?}"))),
        };
        Ok(Some(QdData {
            train: &self.encoded.qd.train,
            dev: eval,
            dev_pools: eval_pools,
        }))
    }

    fn require_qd(&self) -> PyResult<QdData<'_>> {
        self.qd("dev")?
            .ok_or_else(|| PyValueError::new_err("dataset has no QD split"))
    }
}

#[pymethods]
impl PyDataset {
    /// Synthetic one-to-many corpus with `intents` intents of `per_intent` items each.
    #[staticmethod]
    #[pyo3(signature = (intents, per_intent, seed = 0, pool_negatives = 49, config = None))]
    fn synthetic(
        intents: usize,
        per_intent: usize,
        seed: u64,
        pool_negatives: usize,
        config: Option<PyTrainConfig>,
    ) -> PyResult<Self> {
        let corpus = SyntheticCorpus::generate(SyntheticSpec {
            intents,
            per_intent,
            seed,
        })
        .py()?;
        let (qc, qd) = (corpus.qc.clone(), corpus.qd.clone());
        Self::build(&qc, &qd, seed, pool_negatives, config.as_ref(), Some(corpus))
    }

    /// Loads QC (and optionally QD) JSONL files and prepares them.
    #[staticmethod]
    #[pyo3(signature = (qc_path, qd_path = None, seed = 0, pool_negatives = 49, config = None))]
    fn from_files(
        qc_path: PathBuf,
        qd_path: Option<PathBuf>,
        seed: u64,
        pool_negatives: usize,
        config: Option<PyTrainConfig>,
    ) -> PyResult<Self> {
        let qc = corpus::load_qc(&qc_path).py()?;
        let qd = match qd_path {
            Some(p) => corpus::load_qd(&p).py()?,
            None => Vec::new(),
        };
        Self::build(&qc, &qd, seed, pool_negatives, config.as_ref(), None)
    }

    /// Split sizes keyed `qc_train`, `qc_dev`, ..., `qd_test`.
    fn sizes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        let qc = &self.encoded.qc;
        let qd = &self.encoded.qd;
        for (k, v) in [
            ("qc_train", qc.train.len()),
            ("qc_dev", qc.dev.len()),
            ("qc_test", qc.test.len()),
            ("qd_train", qd.train.len()),
            ("qd_dev", qd.dev.len()),
            ("qd_test", qd.test.len()),
        ] {
            d.set_item(k, v)?;
        }
        Ok(d)
    }

    #[getter]
    fn nl_vocab_size(&self) -> usize {
        self.prepared.vocab.nl.len()
    }

    #[getter]
    fn code_vocab_size(&self) -> usize {
        self.prepared.vocab.code.len()
    }

    #[getter]
    fn has_qd(&self) -> bool {
        self.prepared.qd.is_some()
    }

    /// Synthetic datasets only: whether `candidate_id` solves the same intent as `query_id`
    /// without being its pair.
    fn is_false_negative(&self, query_id: u64, candidate_id: u64) -> PyResult<bool> {
        match &self.synthetic {
            Some(c) => Ok(c.is_false_negative(query_id, candidate_id)),
            None => Err(PyValueError::new_err("labels exist only for synthetic datasets")),
        }
    }

    fn save_vocabulary(&self, path: PathBuf) -> PyResult<()> {
        self.prepared.vocab.save(&path).py()
    }
}

// ---------------------------------------------------------------------------------------------
// models

fn encode_text(index: &corpus::TokenIndex, tokens: &[String], max_len: usize) -> PyResult<Vec<usize>> {
    let ids = index.encode(tokens, max_len);
    if ids.is_empty() {
        return Err(to_py(Error::EmptySequence));
    }
    Ok(ids)
}

/// Question-code matcher bound to the vocabulary it was trained with.
#[pyclass(name = "QCModel", module = "advcode_py", from_py_object)]
#[derive(Clone)]
struct PyQCModel {
    model: model::QCModel,
    vocab: corpus::Vocabulary,
    config: training::TrainConfig,
}

#[pymethods]
impl PyQCModel {
    #[pyo3(signature = (question, code, lang = "python"))]
    fn score(&self, question: &str, code: &str, lang: &str) -> PyResult<f64> {
        let q = encode_text(&self.vocab.nl, &corpus::tokenize_nl(question), self.config.max_question_len)?;
        let c = encode_text(
            &self.vocab.code,
            &corpus::tokenize_code(code, Lang::parse(lang)),
            self.config.max_code_len,
        )?;
        model::score_qc(&self.model, &q, &c).py()
    }

    /// Indices of `codes` from best to worst match for `question`.
    #[pyo3(signature = (question, codes, lang = "python"))]
    fn rank(&self, question: &str, codes: Vec<String>, lang: &str) -> PyResult<Vec<usize>> {
        let scores = codes
            .iter()
            .map(|c| self.score(question, c, lang))
            .collect::<PyResult<Vec<_>>>()?;
        let mut order: Vec<usize> = (0..codes.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Ok(order)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        Checkpoint::new(ModelKind::Qc, &self.vocab, &self.config, ModelPayload::Qc(self.model.clone()))
            .save(&path)
            .py()
    }

    /// Loads a QC checkpoint trained against `dataset`'s vocabulary.
    #[staticmethod]
    fn load(path: PathBuf, dataset: &PyDataset) -> PyResult<Self> {
        let ckpt = Checkpoint::load(&path).py()?;
        ckpt.verify_vocab(&dataset.prepared.vocab).py()?;
        let config = ckpt.config.clone();
        Ok(Self {
            model: ckpt.into_qc().py()?,
            vocab: dataset.prepared.vocab.clone(),
            config,
        })
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        use advcode::model::Parameters;
        self.model.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Question-question matcher bound to its vocabulary.
#[pyclass(name = "QDModel", module = "advcode_py", from_py_object)]
#[derive(Clone)]
struct PyQDModel {
    model: model::QDModel,
    vocab: corpus::Vocabulary,
    config: training::TrainConfig,
}

#[pymethods]
impl PyQDModel {
    fn score(&self, q1: &str, q2: &str) -> PyResult<f64> {
        let limit = self.config.max_question_len;
        let a = encode_text(&self.vocab.nl, &corpus::tokenize_nl(q1), limit)?;
        let b = encode_text(&self.vocab.nl, &corpus::tokenize_nl(q2), limit)?;
        model::score_qd(&self.model, &a, &b).py()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        Checkpoint::new(ModelKind::Qd, &self.vocab, &self.config, ModelPayload::Qd(self.model.clone()))
            .save(&path)
            .py()
    }

    #[staticmethod]
    fn load(path: PathBuf, dataset: &PyDataset) -> PyResult<Self> {
        let ckpt = Checkpoint::load(&path).py()?;
        ckpt.verify_vocab(&dataset.prepared.vocab).py()?;
        let config = ckpt.config.clone();
        Ok(Self {
            model: ckpt.into_qd().py()?,
            vocab: dataset.prepared.vocab.clone(),
            config,
        })
    }
}

// ---------------------------------------------------------------------------------------------
// training and evaluation

fn history_rows<'py>(py: Python<'py>, history: &TrainHistory) -> PyResult<Vec<Bound<'py, PyDict>>> {
    history
        .records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("epoch", r.epoch)?;
            d.set_item("dev_map", r.dev_map)?;
            d.set_item("dev_ndcg", r.dev_ndcg)?;
            d.set_item("train_loss", r.train_loss)?;
            d.set_item("mean_weight", r.mean_weight)?;
            Ok(d)
        })
        .collect()
}

fn sample_rows<'py>(py: Python<'py>, samples: &[SampleRecord]) -> PyResult<Vec<Bound<'py, PyDict>>> {
    samples
        .iter()
        .map(|s| {
            let d = PyDict::new(py);
            d.set_item("epoch", s.epoch)?;
            d.set_item("query_id", s.query_id)?;
            d.set_item("chosen_id", s.chosen_id)?;
            d.set_item("weight", s.weight)?;
            d.set_item("loss", s.loss)?;
            d.set_item("log_prob", s.log_prob)?;
            Ok(d)
        })
        .collect()
}

fn config_or_default(config: Option<PyTrainConfig>) -> training::TrainConfig {
    config.map(|c| c.inner).unwrap_or_default()
}

/// Supervised QC training with uniform negatives. Returns `(model, history)`.
#[pyfunction]
#[pyo3(signature = (dataset, config = None))]
fn pretrain_qc<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    config: Option<PyTrainConfig>,
) -> PyResult<(PyQCModel, Vec<Bound<'py, PyDict>>)> {
    let cfg = config_or_default(config);
    let dims = cfg.dims(dataset.prepared.vocab.nl.len(), dataset.prepared.vocab.code.len());
    let data = dataset.qc("dev")?;
    let (model, history) = py.detach(|| training::pretrain_qc(data, dims, &cfg)).py()?;
    let model = PyQCModel {
        model,
        vocab: dataset.prepared.vocab.clone(),
        config: cfg,
    };
    Ok((model, history_rows(py, &history)?))
}

/// QD training initialized from the QC question encoder. Returns `(model, history)`.
#[pyfunction]
#[pyo3(signature = (dataset, qc, config = None))]
fn pretrain_qd<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    qc: &PyQCModel,
    config: Option<PyTrainConfig>,
) -> PyResult<(PyQDModel, Vec<Bound<'py, PyDict>>)> {
    let cfg = config_or_default(config);
    let data = dataset.require_qd()?;
    let (model, history) = py.detach(|| training::pretrain_qd(data, &qc.model, &cfg)).py()?;
    let model = PyQDModel {
        model,
        vocab: dataset.prepared.vocab.clone(),
        config: cfg,
    };
    Ok((model, history_rows(py, &history)?))
}

/// Adversarial QC training regularized by `qd`. Returns a dict with `qc`, `qd`, `history` and
/// `samples` (empty unless `record_samples` is set).
#[pyfunction]
#[pyo3(signature = (dataset, qc, qd, config = None))]
fn train_adversarial<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    qc: &PyQCModel,
    qd: &PyQDModel,
    config: Option<PyTrainConfig>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config_or_default(config);
    let (qc_data, qd_data) = (dataset.qc("dev")?, dataset.qd("dev")?);
    let run = py
        .detach(|| training::train_adversarial(qc_data, qd_data, qc.model.clone(), qd.model.clone(), &cfg))
        .py()?;
    let out = PyDict::new(py);
    let vocab = &dataset.prepared.vocab;
    out.set_item(
        "qc",
        PyQCModel {
            model: run.qc,
            vocab: vocab.clone(),
            config: cfg.clone(),
        },
    )?;
    out.set_item(
        "qd",
        PyQDModel {
            model: run.qd,
            vocab: vocab.clone(),
            config: cfg,
        },
    )?;
    out.set_item("history", history_rows(py, &run.history)?)?;
    out.set_item("samples", sample_rows(py, &run.samples)?)?;
    Ok(out)
}

/// Multi-task baseline sharing the question encoder with the QD task. Returns `(model, history)`.
#[pyfunction]
#[pyo3(signature = (dataset, config = None))]
fn train_mtl_dcs<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    config: Option<PyTrainConfig>,
) -> PyResult<(PyQCModel, Vec<Bound<'py, PyDict>>)> {
    let cfg = config_or_default(config);
    let dims = cfg.dims(dataset.prepared.vocab.nl.len(), dataset.prepared.vocab.code.len());
    let (data, qd_train) = (dataset.qc("dev")?, &dataset.encoded.qd.train);
    let (model, history) = py.detach(|| training::train_mtl_dcs(data, qd_train, dims, &cfg)).py()?;
    let model = PyQCModel {
        model,
        vocab: dataset.prepared.vocab.clone(),
        config: cfg,
    };
    Ok((model, history_rows(py, &history)?))
}

fn report_dict<'py>(py: Python<'py>, report: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("map", report.map)?;
    d.set_item("ndcg", report.ndcg)?;
    d.set_item("ranks", report.per_query.iter().map(|q| q.rank).collect::<Vec<_>>())?;
    Ok(d)
}

/// Pooled MAP and nDCG of a QC or QD model on the dataset's dev or test pools.
#[pyfunction]
#[pyo3(signature = (model, dataset, split = "test"))]
fn evaluate<'py>(
    py: Python<'py>,
    model: &Bound<'py, PyAny>,
    dataset: &PyDataset,
    split: &str,
) -> PyResult<Bound<'py, PyDict>> {
    if let Ok(qc) = model.extract::<PyRef<'_, PyQCModel>>() {
        let data = dataset.qc(split)?;
        let model = &qc.model;
        let report = py
            .detach(|| evaluation::evaluate(&QcPoolScorer::new(model, data.dev)?, data.dev_pools))
            .py()?;
        return report_dict(py, &report);
    }
    if let Ok(qd) = model.extract::<PyRef<'_, PyQDModel>>() {
        let data = dataset
            .qd(split)?
            .ok_or_else(|| PyValueError::new_err("dataset has no QD split"))?;
        let model = &qd.model;
        let report = py
            .detach(|| evaluation::evaluate(&QdPoolScorer::new(model, data.dev)?, data.dev_pools))
            .py()?;
        return report_dict(py, &report);
    }
    Err(PyTypeError::new_err("expected a QCModel or QDModel"))
}

#[pymodule]
fn advcode_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tokenize_nl, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize_code, m)?)?;
    m.add_function(wrap_pyfunction!(hinge_loss, m)?)?;
    m.add_function(wrap_pyfunction!(adversarial_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_relevance, m)?)?;
    m.add_function(wrap_pyfunction!(qd_weight, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain_qc, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain_qd, m)?)?;
    m.add_function(wrap_pyfunction!(train_adversarial, m)?)?;
    m.add_function(wrap_pyfunction!(train_mtl_dcs, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyQCModel>()?;
    m.add_class::<PyQDModel>()?;
    Ok(())
}
