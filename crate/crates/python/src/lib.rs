//! Python bindings: model construction and inference, checkpoints, BPE,
//! tokenization and the evaluation metrics.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mmnmt::data::bpe::BpeModel;
use mmnmt::data::tokenize::tokenize as tokenize_text;
use mmnmt::data::Preprocessor;
use mmnmt::metrics::{approx_randomization, bleu4, chrf as chrf_score, ter as ter_score, Metric};
use mmnmt::training::checkpoint::{peek_precision_file, Checkpoint};
use mmnmt::training::param_count as count_params;
use mmnmt::vision::synth_features as synth;
use mmnmt::{beam_search, greedy_decode, Error, Hypothesis, Model, ModelConfig, Precision, Real, Tensor};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(mmnmt_py, MmnmtError, PyException);

fn err(e: Error) -> PyErr {
    MmnmtError::new_err(e.to_string())
}

fn words(lines: &[String]) -> Vec<Vec<String>> {
    lines
        .iter()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect()
}

fn image_tensor<T: Real>(rows: Option<Vec<Vec<f64>>>) -> PyResult<Option<Tensor<T>>> {
    let Some(rows) = rows else { return Ok(None) };
    let cols = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(MmnmtError::new_err("image rows differ in length"));
    }
    Tensor::from_f64(&[rows.len(), cols], &flat)
        .map(Some)
        .map_err(|e| err(e.into()))
}

/// Network dimensions.
#[pyclass(name = "ModelConfig", module = "mmnmt_py", skip_from_py_object)]
#[derive(Clone)]
struct PyModelConfig {
    inner: ModelConfig,
}

#[pymethods]
impl PyModelConfig {
    #[new]
    #[pyo3(signature = (src_vocab, tgt_vocab, multimodal = false, src_emb = 620, tgt_emb = 620, enc_hidden = 1024, dec_hidden = 1024, att_dim = 1024, proj_dim = 620, feat_len = 196, feat_dim = 1024))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        src_vocab: usize,
        tgt_vocab: usize,
        multimodal: bool,
        src_emb: usize,
        tgt_emb: usize,
        enc_hidden: usize,
        dec_hidden: usize,
        att_dim: usize,
        proj_dim: usize,
        feat_len: usize,
        feat_dim: usize,
    ) -> PyResult<Self> {
        let inner = ModelConfig {
            src_vocab,
            tgt_vocab,
            src_emb,
            tgt_emb,
            enc_hidden,
            dec_hidden,
            att_dim,
            proj_dim,
            feat_len,
            feat_dim,
            multimodal,
        };
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (multimodal = false))]
    fn full_size(multimodal: bool) -> Self {
        Self {
            inner: ModelConfig::full_size(multimodal),
        }
    }

    #[staticmethod]
    #[pyo3(signature = (src_vocab, tgt_vocab, multimodal = false))]
    fn tiny(src_vocab: usize, tgt_vocab: usize, multimodal: bool) -> Self {
        Self {
            inner: ModelConfig::tiny(src_vocab, tgt_vocab, multimodal),
        }
    }

    #[getter]
    fn multimodal(&self) -> bool {
        self.inner.multimodal
    }

    fn to_dict(&self) -> BTreeMap<&'static str, String> {
        self.inner.to_pairs().into_iter().collect()
    }

    /// Parameter totals per component plus `"total"`.
    fn param_count(&self) -> BTreeMap<String, usize> {
        let count = count_params(&self.inner);
        let mut out = count.components;
        out.insert("total".into(), count.total);
        out
    }

    fn __repr__(&self) -> String {
        let pairs: Vec<String> = self.inner.to_pairs().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("ModelConfig({})", pairs.join(", "))
    }
}

enum Weights {
    F32(Model<f32>),
    F64(Model<f64>),
}

macro_rules! with_model {
    ($weights:expr, $m:ident, $T:ident => $body:expr) => {
        match $weights {
            Weights::F32($m) => {
                type $T = f32;
                $body
            }
            Weights::F64($m) => {
                type $T = f64;
                $body
            }
        }
    };
}

fn load_checkpoint<T: Real>(path: &Path) -> PyResult<(Model<T>, Option<Preprocessor>)> {
    let ck = Checkpoint::<T>::load(path).map_err(err)?;
    Ok((ck.model, ck.preprocessor))
}

/// A translation model in single or double precision, optionally with the
/// tokenizer, BPE table and vocabularies it was trained with.
#[pyclass(name = "Model", module = "mmnmt_py")]
struct PyModel {
    weights: Weights,
    preprocessor: Option<Preprocessor>,
}

fn hypothesis(h: Hypothesis) -> (Vec<usize>, f64, f64) {
    (h.tokens, h.log_prob, h.score)
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (config, seed = 1, precision = "f64"))]
    fn new(config: &PyModelConfig, seed: u64, precision: &str) -> PyResult<Self> {
        let precision: Precision = precision.parse().map_err(MmnmtError::new_err)?;
        let config = config.inner.clone();
        let weights = match precision {
            Precision::F32 => Weights::F32(Model::new(config, seed).map_err(err)?),
            Precision::F64 => Weights::F64(Model::new(config, seed).map_err(err)?),
        };
        Ok(Self {
            weights,
            preprocessor: None,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (weights, preprocessor) = match peek_precision_file(&path).map_err(err)? {
            Precision::F32 => {
                let (m, p) = load_checkpoint::<f32>(&path)?;
                (Weights::F32(m), p)
            }
            Precision::F64 => {
                let (m, p) = load_checkpoint::<f64>(&path)?;
                (Weights::F64(m), p)
            }
        };
        Ok(Self { weights, preprocessor })
    }

    /// Writes the weights (and preprocessing, when present) as a checkpoint.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        with_model!(&self.weights, m, T => {
            let mut ck = Checkpoint::<T>::new(m.clone());
            ck.preprocessor = self.preprocessor.clone();
            ck.save(&path).map_err(err)
        })
    }

    #[getter]
    fn config(&self) -> PyModelConfig {
        let inner = with_model!(&self.weights, m, _T => m.config().clone());
        PyModelConfig { inner }
    }

    #[getter]
    fn precision(&self) -> &'static str {
        match self.weights {
            Weights::F32(_) => "f32",
            Weights::F64(_) => "f64",
        }
    }

    #[getter]
    fn num_params(&self) -> usize {
        with_model!(&self.weights, m, _T => m.params().total_elements())
    }

    #[getter]
    fn has_preprocessor(&self) -> bool {
        self.preprocessor.is_some()
    }

    /// Negative log-likelihood of `tgt` (ids, end marker appended
    /// internally) given `src` and an optional `L×D` image.
    #[pyo3(signature = (src, tgt, image = None))]
    fn loss(&self, src: Vec<usize>, tgt: Vec<usize>, image: Option<Vec<Vec<f64>>>) -> PyResult<f64> {
        with_model!(&self.weights, m, T => {
            let image = image_tensor::<T>(image)?;
            m.sentence_loss(&src, &tgt, image.as_ref()).map(|l| l.as_f64()).map_err(err)
        })
    }

    /// Argmax decoding. Returns `(tokens, log_prob, score)`.
    #[pyo3(signature = (src, image = None, max_len = 100))]
    fn greedy(&self, src: Vec<usize>, image: Option<Vec<Vec<f64>>>, max_len: usize) -> PyResult<(Vec<usize>, f64, f64)> {
        with_model!(&self.weights, m, T => {
            let image = image_tensor::<T>(image)?;
            greedy_decode(m, &src, image.as_ref(), max_len).map(hypothesis).map_err(err)
        })
    }

    /// Beam search. Returns `(tokens, log_prob, score)`.
    #[pyo3(signature = (src, image = None, beam = 5, max_len = 100))]
    fn beam(
        &self,
        src: Vec<usize>,
        image: Option<Vec<Vec<f64>>>,
        beam: usize,
        max_len: usize,
    ) -> PyResult<(Vec<usize>, f64, f64)> {
        with_model!(&self.weights, m, T => {
            let image = image_tensor::<T>(image)?;
            beam_search(m, &src, image.as_ref(), beam, max_len).map(hypothesis).map_err(err)
        })
    }

    /// Translates raw text. Needs a checkpoint saved with preprocessing.
    #[pyo3(signature = (line, image = None, beam = 5, max_len = 100))]
    fn translate(&self, line: &str, image: Option<Vec<Vec<f64>>>, beam: usize, max_len: usize) -> PyResult<String> {
        let pre = self
            .preprocessor
            .as_ref()
            .ok_or_else(|| MmnmtError::new_err("model has no tokenizer or vocabularies"))?;
        let ids = pre.encode_source(line);
        if ids.is_empty() {
            return Ok(String::new());
        }
        let (tokens, _, _) = self.beam(ids, image, beam, max_len)?;
        Ok(pre.decode_target(&tokens))
    }
}

/// Byte-pair encoding table learned over tokenized text.
#[pyclass(name = "Bpe", module = "mmnmt_py")]
struct PyBpe {
    inner: BpeModel,
}

#[pymethods]
impl PyBpe {
    #[staticmethod]
    #[pyo3(signature = (lines, num_merges, min_frequency = 2))]
    fn learn(lines: Vec<String>, num_merges: usize, min_frequency: usize) -> Self {
        let tokens: Vec<Vec<String>> = lines.iter().map(|l| tokenize_text(l)).collect();
        Self {
            inner: BpeModel::learn(tokens.iter().map(Vec::as_slice), num_merges, min_frequency),
        }
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        BpeModel::from_text(text).map(|inner| Self { inner }).map_err(err)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn merges(&self) -> Vec<(String, String)> {
        self.inner.merges().to_vec()
    }

    /// Tokenizes and segments one line into subwords.
    fn apply(&self, line: &str) -> Vec<String> {
        self.inner.apply(&tokenize_text(line))
    }
}

#[pyfunction]
fn tokenize(line: &str) -> Vec<String> {
    tokenize_text(line)
}

/// Corpus BLEU4 over whitespace-separated tokens, in percent.
#[pyfunction]
fn bleu(hyps: Vec<String>, refs: Vec<String>) -> PyResult<f64> {
    bleu4(&words(&hyps), &words(&refs)).map_err(err)
}

/// Corpus chrF: `{"score", "precision", "recall"}` in percent.
#[pyfunction]
#[pyo3(signature = (hyps, refs, beta = 3.0, order = 6))]
fn chrf(hyps: Vec<String>, refs: Vec<String>, beta: f64, order: usize) -> PyResult<BTreeMap<&'static str, f64>> {
    let s = chrf_score(&hyps, &refs, beta, order).map_err(err)?;
    Ok(BTreeMap::from([
        ("score", s.f_score),
        ("precision", s.precision),
        ("recall", s.recall),
    ]))
}

/// Corpus TER as a fraction of reference length.
#[pyfunction]
fn ter(hyps: Vec<String>, refs: Vec<String>) -> PyResult<f64> {
    ter_score(&words(&hyps), &words(&refs)).map_err(err)
}

/// Approximate randomization test between two systems.
#[pyfunction]
#[pyo3(signature = (metric, hyps_a, hyps_b, refs, trials = 10_000, seed = 1))]
fn significance<'py>(
    py: Python<'py>,
    metric: &str,
    hyps_a: Vec<String>,
    hyps_b: Vec<String>,
    refs: Vec<String>,
    trials: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let metric: Metric = metric.parse().map_err(MmnmtError::new_err)?;
    let r = approx_randomization(metric, &hyps_a, &hyps_b, &refs, trials, seed).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("metric", r.metric.to_string())?;
    out.set_item("score_a", r.score_a)?;
    out.set_item("score_b", r.score_b)?;
    out.set_item("observed_delta", r.observed_delta)?;
    out.set_item("p_value", r.p_value)?;
    out.set_item("trials", r.trials)?;
    Ok(out)
}

/// Parameter totals for the full-size network.
#[pyfunction]
#[pyo3(signature = (multimodal = false))]
fn param_count(multimodal: bool) -> usize {
    count_params(&ModelConfig::full_size(multimodal)).total
}

/// Deterministic synthetic image features: `[(image_id, rows)]`.
#[pyfunction]
fn synth_features(seed: u64, feat_len: usize, feat_dim: usize, n: usize) -> Vec<(String, Vec<Vec<f64>>)> {
    synth::<f64>(seed, feat_len, feat_dim, n)
        .into_iter()
        .map(|s| {
            let rows = (0..s.features.rows()).map(|r| s.features.row_slice(r).to_vec()).collect();
            (s.image_id, rows)
        })
        .collect()
}

#[pymodule]
fn mmnmt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MmnmtError", m.py().get_type::<MmnmtError>())?;
    m.add_class::<PyModelConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyBpe>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(chrf, m)?)?;
    m.add_function(wrap_pyfunction!(ter, m)?)?;
    m.add_function(wrap_pyfunction!(significance, m)?)?;
    m.add_function(wrap_pyfunction!(param_count, m)?)?;
    m.add_function(wrap_pyfunction!(synth_features, m)?)?;
    Ok(())
}
