use ndarray::{Array2, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::graph::{Gradients, ParamStore, Tape};
use super::model::{encode_input, input_words, EncodedInput, ModelConfig, Seq2SeqModel};
use super::vocab::Vocabulary;
use super::Seq2SeqError;
use crate::controls::{serialize_controls, LabeledConceptSet};
use crate::corpus::Sentence;
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub clip_norm: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig { epochs: 5, batch_size: 32, learning_rate: 5e-5, seed: 13, clip_norm: 1.0 }
    }
}

impl TrainingConfig {
    /// Defaults for continued pretraining: three epochs.
    pub fn continued() -> Self {
        TrainingConfig { epochs: 3, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), Seq2SeqError> {
        if self.epochs == 0 || self.batch_size == 0 || self.learning_rate <= 0.0 || self.clip_norm <= 0.0 {
            return Err(Seq2SeqError::ShapeMismatch("training config values must be positive".into()));
        }
        Ok(())
    }
}

/// One (control-token input, target words) training pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub input: Vec<String>,
    pub target: Vec<String>,
}

impl Example {
    pub fn new<S: Into<String>, T: Into<String>>(input: impl IntoIterator<Item = S>, target: impl IntoIterator<Item = T>) -> Self {
        Example { input: input.into_iter().map(Into::into).collect(), target: target.into_iter().map(Into::into).collect() }
    }

    /// Serialized controls as input, the sentence's token surfaces as target.
    pub fn from_labeled(labeled: &LabeledConceptSet, sentence: &Sentence) -> Self {
        Example { input: serialize_controls(labeled), target: sentence.tokens.iter().map(|t| t.surface.clone()).collect() }
    }

    fn words(&self) -> impl Iterator<Item = &str> {
        input_words(&self.input).chain(self.target.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-token loss over the epoch's batches, as optimized.
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainingLog {
    /// Per-token training loss of the starting parameters.
    pub initial_train_loss: f64,
    pub initial_validation_loss: Option<f64>,
    pub epochs: Vec<EpochStats>,
}

impl TrainingLog {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

/// Vocabulary covering every word in the examples.
pub fn build_vocabulary<'a>(examples: impl IntoIterator<Item = &'a Example>) -> Vocabulary {
    let mut words = Vec::new();
    for e in examples {
        words.extend(e.words());
    }
    Vocabulary::build(words)
}

struct Encoded {
    input: EncodedInput,
    target: Vec<usize>,
}

impl Encoded {
    fn tokens(&self) -> usize {
        self.target.len() + 1
    }
}

fn encode_all(model: &Seq2SeqModel, examples: &[Example]) -> Result<Vec<Encoded>, Seq2SeqError> {
    examples
        .iter()
        .map(|e| {
            let input = encode_input(&model.vocab, &e.input);
            if input.len() > model.config.max_positions {
                return Err(Seq2SeqError::ShapeMismatch(format!(
                    "input of {} items exceeds {} positions",
                    input.len(),
                    model.config.max_positions
                )));
            }
            Ok(Encoded { input, target: model.encode_target(&e.target) })
        })
        .collect()
}

/// Trains a fresh model whose vocabulary is built from `examples` and
/// `validation`.
pub fn train(
    examples: &[Example],
    validation: &[Example],
    tcfg: &TrainingConfig,
    mcfg: &ModelConfig,
) -> Result<(Seq2SeqModel, TrainingLog), Seq2SeqError> {
    let vocab = build_vocabulary(examples.iter().chain(validation));
    train_with_vocabulary(examples, validation, vocab, tcfg, mcfg)
}

/// Control codes live entirely in the input tokens, so controlled training is
/// the same procedure.
pub fn train_controlled(
    examples: &[Example],
    validation: &[Example],
    tcfg: &TrainingConfig,
    mcfg: &ModelConfig,
) -> Result<(Seq2SeqModel, TrainingLog), Seq2SeqError> {
    train(examples, validation, tcfg, mcfg)
}

pub fn train_with_vocabulary(
    examples: &[Example],
    validation: &[Example],
    vocab: Vocabulary,
    tcfg: &TrainingConfig,
    mcfg: &ModelConfig,
) -> Result<(Seq2SeqModel, TrainingLog), Seq2SeqError> {
    if examples.is_empty() {
        return Err(Seq2SeqError::EmptyDataset);
    }
    tcfg.validate()?;
    let mut model = Seq2SeqModel::new(*mcfg, vocab, tcfg.seed)?;
    let log = fit(&mut model, examples, validation, tcfg)?;
    Ok((model, log))
}

/// Resumes optimization of `model` on `extra` with fresh optimizer state.
/// Every token must already be in the model's vocabulary.
pub fn continue_pretrain(
    model: &Seq2SeqModel,
    extra: &[Example],
    validation: &[Example],
    tcfg: &TrainingConfig,
) -> Result<(Seq2SeqModel, TrainingLog), Seq2SeqError> {
    let mut model = model.clone();
    if extra.is_empty() {
        return Ok((model, TrainingLog::default()));
    }
    tcfg.validate()?;
    let mut missing: Vec<String> =
        extra.iter().chain(validation).flat_map(Example::words).filter(|w| model.vocab.get(w).is_none()).map(String::from).collect();
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(Seq2SeqError::VocabularyMismatch(missing));
    }
    let log = fit(&mut model, extra, validation, tcfg)?;
    Ok((model, log))
}

/// Mean per-token negative log-likelihood without dropout.
pub fn mean_loss(model: &Seq2SeqModel, examples: &[Example]) -> Result<f64, Seq2SeqError> {
    let encoded = encode_all(model, examples)?;
    Ok(eval_loss(model, &encoded))
}

fn eval_loss(model: &Seq2SeqModel, data: &[Encoded]) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    let losses: Vec<f64> = data
        .par_iter()
        .map(|e| {
            let mut tape = Tape::new(&model.params);
            let loss = model.loss_on(&mut tape, &e.input, &e.target, None);
            tape.scalar(loss)
        })
        .collect();
    let tokens: usize = data.iter().map(Encoded::tokens).sum();
    losses.iter().sum::<f64>() / tokens as f64
}

fn fit(model: &mut Seq2SeqModel, examples: &[Example], validation: &[Example], tcfg: &TrainingConfig) -> Result<TrainingLog, Seq2SeqError> {
    let train_data = encode_all(model, examples)?;
    let val_data = encode_all(model, validation)?;
    let val_loss = |m: &Seq2SeqModel| (!val_data.is_empty()).then(|| eval_loss(m, &val_data));
    let mut log = TrainingLog {
        initial_train_loss: eval_loss(model, &train_data),
        initial_validation_loss: val_loss(model),
        epochs: Vec::with_capacity(tcfg.epochs),
    };
    let mut adam = Adam::new(&model.params, tcfg.learning_rate);
    for epoch in 0..tcfg.epochs {
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        StreamRng::derived(tcfg.seed, 1, epoch as u64).shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut token_sum = 0usize;
        for batch in order.chunks(tcfg.batch_size) {
            let tokens: usize = batch.iter().map(|&i| train_data[i].tokens()).sum();
            let scale = 1.0 / tokens as f64;
            let results: Vec<(f64, Gradients)> = batch
                .par_iter()
                .map(|&i| {
                    let e = &train_data[i];
                    let mut rng = StreamRng::derived(tcfg.seed, 2 + epoch as u64, i as u64);
                    let mut tape = Tape::new(&model.params);
                    let loss = model.loss_on(&mut tape, &e.input, &e.target, Some(&mut rng));
                    (tape.scalar(loss), tape.backward(loss, scale))
                })
                .collect();
            let mut grads = Gradients::zeros(model.params.len());
            for (loss, g) in &results {
                loss_sum += loss;
                grads.merge(g);
            }
            token_sum += tokens;
            grads.clip(tcfg.clip_norm);
            adam.step(&mut model.params, &grads);
        }
        let stats = EpochStats { epoch: epoch + 1, train_loss: loss_sum / token_sum as f64, validation_loss: val_loss(model) };
        log::info!(
            "epoch {}: train loss {:.4}{}",
            stats.epoch,
            stats.train_loss,
            stats.validation_loss.map(|v| format!(", validation loss {v:.4}")).unwrap_or_default()
        );
        log.epochs.push(stats);
    }
    Ok(log)
}

/// Adaptive-moment optimizer with bias correction.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros = || params.iter().map(|(_, t)| Array2::zeros(t.raw_dim())).collect::<Vec<_>>();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros(), v: zeros() }
    }

    /// Parameters without a gradient are left untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let (lr, eps) = (self.lr, self.eps);
        for id in 0..params.len() {
            let Some(g) = grads.get(id) else { continue };
            Zip::from(params.get_mut(id)).and(&mut self.m[id]).and(&mut self.v[id]).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}
