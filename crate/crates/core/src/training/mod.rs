//! Optimisation recipe: initialisation, dropout, ADADELTA, minibatch
//! training with early stopping, checkpoints and parameter counting.

pub mod adadelta;
pub mod checkpoint;
pub mod dropout;
pub mod early_stop;
pub mod init;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::corpus::TrainingTriple;
use crate::error::{Error, Result, TensorError};
use crate::metrics::bleu::bleu4;
use crate::model::{Model, ModelConfig};
use crate::params::ParamSet;
use crate::search::greedy_trace;
use crate::tape::Tape;
use crate::tensor::{Precision, Real, Tensor};
use crate::vision::FeatureStore;

pub use adadelta::{clip_global_norm, AdadeltaState};
pub use dropout::{make_dropout_masks, DropoutMasks};
pub use early_stop::{EarlyStopState, StopDecision};
pub use init::init_params;

/// Number of minibatches whose examples are pooled before sorting by
/// source length.
const BUCKET_POOL: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub dropout: f64,
    pub patience: usize,
    pub seed: u64,
    pub precision: Precision,
    pub max_epochs: usize,
    pub rho: f64,
    pub epsilon: f64,
    /// Global gradient-norm bound; `0` disables clipping.
    pub clip_norm: f64,
    /// Length cap for validation decoding.
    pub max_decode_len: usize,
}

impl TrainConfig {
    /// Minibatches of 80 (text-only) or 40 (multimodal), dropout 0.5,
    /// patience 20.
    pub fn recipe(multimodal: bool) -> Self {
        Self {
            batch_size: if multimodal { 40 } else { 80 },
            dropout: 0.5,
            patience: 20,
            seed: 1234,
            precision: Precision::F32,
            max_epochs: 500,
            rho: AdadeltaState::<f32>::DEFAULT_RHO,
            epsilon: AdadeltaState::<f32>::DEFAULT_EPSILON,
            clip_norm: 1.0,
            max_decode_len: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.rho) || self.epsilon <= 0.0 {
            return Err(Error::Config("rho must lie in [0, 1) and epsilon be positive".into()));
        }
        if self.max_decode_len == 0 {
            return Err(Error::Config("max_decode_len must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("batch_size", self.batch_size.to_string()),
            ("dropout", self.dropout.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
            ("precision", self.precision.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("rho", self.rho.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            ("max_decode_len", self.max_decode_len.to_string()),
        ]
    }

    /// Overrides fields present in `map`; unknown keys are ignored here.
    pub fn update_from(&mut self, map: &BTreeMap<String, String>) -> Result<()> {
        fn parse<V: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str, slot: &mut V) -> Result<()> {
            if let Some(v) = map.get(key) {
                *slot = v
                    .parse()
                    .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))?;
            }
            Ok(())
        }
        parse(map, "batch_size", &mut self.batch_size)?;
        parse(map, "dropout", &mut self.dropout)?;
        parse(map, "patience", &mut self.patience)?;
        parse(map, "seed", &mut self.seed)?;
        parse(map, "precision", &mut self.precision)?;
        parse(map, "max_epochs", &mut self.max_epochs)?;
        parse(map, "rho", &mut self.rho)?;
        parse(map, "epsilon", &mut self.epsilon)?;
        parse(map, "clip_norm", &mut self.clip_norm)?;
        parse(map, "max_decode_len", &mut self.max_decode_len)?;
        self.validate()
    }
}

/// Everything needed to continue an interrupted run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub optimizer: AdadeltaState<T>,
    pub early_stop: EarlyStopState,
    /// Completed epochs.
    pub epoch: usize,
}

impl<T: Real> TrainState<T> {
    pub fn fresh(params: &ParamSet<T>, config: &TrainConfig) -> Self {
        Self {
            optimizer: AdadeltaState::new(params, config.rho, config.epsilon),
            early_stop: EarlyStopState::new(config.patience),
            epoch: 0,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-token cross-entropy over the epoch's training batches.
    pub train_loss: f64,
    pub valid_bleu: f64,
    pub best_bleu: f64,
    pub best_epoch: usize,
    pub improved: bool,
    pub updates: usize,
    /// Mean gate value during validation decoding (multimodal only).
    pub beta_mean: Option<f64>,
    pub beta_above_05: Option<f64>,
    pub beta_above_08: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub history: Vec<EpochRecord>,
    pub state: TrainState<T>,
    pub stopped_early: bool,
    /// Parameters of the best validation epoch seen in this run.
    pub best_params: Option<ParamSet<T>>,
}

/// Training and validation examples plus image features when the model
/// is multimodal.
#[derive(Clone, Copy)]
pub struct TrainData<'a, T> {
    pub train: &'a [TrainingTriple],
    pub valid: &'a [TrainingTriple],
    pub features: Option<&'a FeatureStore<T>>,
}

impl<'a, T: Real> TrainData<'a, T> {
    pub fn image(&self, model: &Model<T>, ex: &TrainingTriple) -> Result<Option<&'a Tensor<T>>> {
        if !model.is_multimodal() {
            return Ok(None);
        }
        let store = self
            .features
            .ok_or_else(|| Error::Input("multimodal training needs image features".into()))?;
        let id = ex
            .image_id
            .as_deref()
            .ok_or_else(|| Error::Input(format!("line {} has no image id", ex.line)))?;
        store.get(id).map(Some).ok_or_else(|| Error::Feature {
            image_id: id.to_string(),
            detail: format!("referenced by line {} but not in the feature file", ex.line),
        })
    }
}

/// Minibatches for one epoch: a seeded shuffle, then pools of
/// `BUCKET_POOL` batches sorted by source length and cut into batches,
/// then a shuffle of the batch order.
pub fn epoch_batches(src_lens: &[usize], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(dropout::mask_seed(seed, epoch as u64, u64::MAX));
    let mut order: Vec<usize> = (0..src_lens.len()).collect();
    order.shuffle(&mut rng);
    let mut batches = Vec::new();
    for pool in order.chunks(batch_size * BUCKET_POOL) {
        let mut pool = pool.to_vec();
        pool.sort_by_key(|&i| src_lens[i]);
        batches.extend(pool.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(&mut rng);
    batches
}

fn param_norms<T: Real>(params: &ParamSet<T>) -> String {
    params
        .iter()
        .map(|(_, name, t)| format!("{name}={:.4e}", t.norm_sq().as_f64().sqrt()))
        .collect::<Vec<_>>()
        .join(", ")
}

fn diverged<T: Real>(epoch: usize, batch: usize, params: &ParamSet<T>, what: &str) -> Error {
    Error::Diverged {
        epoch,
        batch,
        detail: format!("{what}; parameter norms: {}", param_norms(params)),
    }
}

/// Mean per-token negative log-likelihood without dropout.
pub fn corpus_loss<T: Real>(model: &Model<T>, data: &TrainData<'_, T>, examples: &[TrainingTriple]) -> Result<f64> {
    let mut total = 0.0;
    let mut tokens = 0usize;
    for ex in examples {
        total += model.sentence_loss(&ex.src, &ex.tgt, data.image(model, ex)?)?.as_f64();
        tokens += ex.tgt.len() + 1;
    }
    Ok(if tokens == 0 { 0.0 } else { total / tokens as f64 })
}

/// Validation summary from greedy decoding.
#[derive(Clone, Debug, PartialEq)]
pub struct Validation {
    pub bleu: f64,
    pub betas: Vec<f64>,
}

pub fn validate<T: Real>(
    model: &Model<T>,
    data: &TrainData<'_, T>,
    examples: &[TrainingTriple],
    max_len: usize,
) -> Result<Validation> {
    let mut hyps = Vec::with_capacity(examples.len());
    let mut refs = Vec::with_capacity(examples.len());
    let mut betas = Vec::new();
    for ex in examples {
        let memory = model.prepare(&ex.src, data.image(model, ex)?)?;
        let (hyp, trace) = greedy_trace(model, &memory, max_len)?;
        betas.extend(trace.iter().filter_map(|s| s.beta.map(Real::as_f64)));
        hyps.push(hyp.tokens);
        refs.push(ex.tgt.clone());
    }
    Ok(Validation {
        bleu: bleu4(&hyps, &refs)?,
        betas,
    })
}

/// Fractions of gate values strictly above 0.5 and 0.8.
pub fn beta_fractions(betas: &[f64]) -> (f64, f64) {
    if betas.is_empty() {
        return (0.0, 0.0);
    }
    let n = betas.len() as f64;
    let above = |t: f64| betas.iter().filter(|&&b| b > t).count() as f64 / n;
    (above(0.5), above(0.8))
}

/// Runs epochs until early stopping or `max_epochs`. `on_epoch` sees
/// every log record with the current model and state (for logging and
/// checkpointing). The returned outcome carries the best parameters.
pub fn train<T: Real>(
    model: &mut Model<T>,
    data: TrainData<'_, T>,
    config: &TrainConfig,
    resume: Option<TrainState<T>>,
    mut on_epoch: impl FnMut(&EpochRecord, &Model<T>, &TrainState<T>) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::Input("training corpus is empty".into()));
    }
    if data.valid.is_empty() {
        return Err(Error::Input("validation set is empty".into()));
    }
    if model.is_multimodal() != data.features.is_some() {
        return Err(Error::Input("image features must be given exactly when the model is multimodal".into()));
    }
    let mut state = resume.unwrap_or_else(|| TrainState::fresh(model.params(), config));
    let src_lens: Vec<usize> = data.train.iter().map(|e| e.src.len()).collect();
    let mut history = Vec::new();
    let mut best_params = None;
    let mut stopped_early = false;

    while state.epoch < config.max_epochs {
        let epoch = state.epoch + 1;
        let mut loss_sum = 0.0;
        let mut token_count = 0usize;
        let batches = epoch_batches(&src_lens, config.batch_size, config.seed, epoch);
        for (b, batch) in batches.iter().enumerate() {
            let mut grads = model.params().zeros_like();
            for &i in batch {
                let ex = &data.train[i];
                let image = data.image(model, ex)?;
                let masks = (config.dropout > 0.0).then(|| {
                    make_dropout_masks(model.config(), config.dropout, config.seed, epoch as u64, i as u64)
                });
                let tape = Tape::new();
                let vars = model.bind(&tape, true);
                let step = model
                    .sentence_loss_on(&tape, &vars, &ex.src, &ex.tgt, image, masks.as_ref())
                    .and_then(|(loss, n)| Ok((loss, n, tape.backward(loss)?)));
                let (loss, n, g) = match step {
                    Ok(v) => v,
                    Err(Error::Tensor(TensorError::NonFinite { op })) => {
                        return Err(diverged(epoch, b + 1, model.params(), &format!("non-finite value in {op}")))
                    }
                    Err(e) => return Err(e),
                };
                loss_sum += tape.scalar(loss).as_f64();
                token_count += n;
                g.accumulate_into(&mut grads);
            }
            let scale = T::of(1.0 / batch.len() as f64);
            for g in grads.iter_mut() {
                g.scale(scale);
            }
            if !loss_sum.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(diverged(epoch, b + 1, model.params(), "non-finite loss or gradient"));
            }
            clip_global_norm(&mut grads, config.clip_norm);
            state.optimizer.step(model.params_mut(), &grads)?;
        }

        let validation = validate(model, &data, data.valid, config.max_decode_len)?;
        let decision = state.early_stop.observe(epoch, validation.bleu);
        state.epoch = epoch;
        if decision == StopDecision::Improved {
            best_params = Some(model.params().clone());
        }
        let (above05, above08) = beta_fractions(&validation.betas);
        let has_beta = !validation.betas.is_empty();
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / token_count.max(1) as f64,
            valid_bleu: validation.bleu,
            best_bleu: state.early_stop.best_bleu,
            best_epoch: state.early_stop.best_epoch,
            improved: decision == StopDecision::Improved,
            updates: batches.len(),
            beta_mean: has_beta.then(|| validation.betas.iter().sum::<f64>() / validation.betas.len() as f64),
            beta_above_05: has_beta.then_some(above05),
            beta_above_08: has_beta.then_some(above08),
        };
        on_epoch(&record, model, &state)?;
        history.push(record);
        if decision == StopDecision::Stop {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome {
        history,
        state,
        stopped_early,
        best_params,
    })
}

/// Parameter totals per component.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub components: BTreeMap<String, usize>,
    pub total: usize,
}

/// Exact parameter counts from shape arithmetic, grouped by the first two
/// name segments (`enc.embedding`, `dec.att_img`, …).
pub fn param_count(config: &ModelConfig) -> ParamCount {
    let mut components = BTreeMap::new();
    let mut total = 0;
    for spec in config.param_specs() {
        let group = spec.name.rsplit_once('.').map_or(spec.name.as_str(), |(g, _)| g);
        let group = if spec.name.ends_with("embedding") { spec.name.as_str() } else { group };
        *components.entry(group.to_string()).or_insert(0) += spec.elements();
        total += spec.elements();
    }
    ParamCount { components, total }
}
