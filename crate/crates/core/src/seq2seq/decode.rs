use serde::{Deserialize, Serialize};

use super::model::{encode_input, Seq2SeqModel};
use super::vocab::{Vocabulary, EOS};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum DecodeStrategy {
    #[default]
    TopK,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct DecoderConfig {
    pub strategy: DecodeStrategy,
    pub k: usize,
    pub max_length: usize,
    /// Exponent `α` in the candidate score `log p / len^(α - 1)`; 1.0 leaves
    /// the summed log-probability unchanged.
    pub length_penalty: f64,
    pub seed: u64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig { strategy: DecodeStrategy::TopK, k: 50, max_length: 64, length_penalty: 1.0, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StepTrace {
    /// The step's top-k ids, most probable first.
    pub candidates: Vec<usize>,
    pub chosen: usize,
    /// Sum of the full next-token distribution before restriction.
    pub distribution_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Generation {
    /// Emitted ids, excluding the closing EOS.
    pub ids: Vec<usize>,
    pub tokens: Vec<String>,
    pub text: String,
    /// Log-probability under the unrestricted model, EOS included when
    /// emitted.
    pub log_prob: f64,
    pub finished: bool,
    pub steps: Vec<StepTrace>,
}

impl Generation {
    pub fn score(&self, length_penalty: f64) -> f64 {
        let len = (self.ids.len() + usize::from(self.finished)).max(1) as f64;
        self.log_prob / len.powf(length_penalty - 1.0)
    }
}

/// Allowed ids ranked by probability, ties to the lower id.
fn ranked(dist: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..dist.len()).filter(|&i| !Vocabulary::is_banned_output(i)).collect();
    ids.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    ids
}

fn step_limit(model: &Seq2SeqModel, max_length: usize) -> usize {
    max_length.min(model.config.max_positions - 1)
}

fn finish(model: &Seq2SeqModel, ids: Vec<usize>, log_prob: f64, finished: bool, steps: Vec<StepTrace>) -> Generation {
    let tokens = ids.iter().map(|&i| model.vocab.token(i).to_string()).collect();
    let text = model.detokenize(&ids);
    Generation { ids, tokens, text, log_prob, finished, steps }
}

/// Top-k sampling: at each step the `k` most probable permitted tokens are
/// renormalized and one is drawn. Stops at EOS or `max_length` tokens.
pub fn generate<S: AsRef<str>>(model: &Seq2SeqModel, input: &[S], dcfg: &DecoderConfig) -> Generation {
    let mut rng = StreamRng::new(dcfg.seed);
    sample_with(model, input, dcfg, &mut rng)
}

fn sample_with<S: AsRef<str>>(model: &Seq2SeqModel, input: &[S], dcfg: &DecoderConfig, rng: &mut StreamRng) -> Generation {
    assert!(dcfg.k >= 1, "k must be at least 1");
    let memory = model.memory(&encode_input(&model.vocab, input));
    let mut ids = Vec::new();
    let mut steps = Vec::new();
    let mut log_prob = 0.0;
    for _ in 0..step_limit(model, dcfg.max_length) {
        let dist = model.step_distribution(&memory, &ids);
        let mut top = ranked(&dist);
        top.truncate(dcfg.k);
        let total: f64 = top.iter().map(|&i| dist[i]).sum();
        let mut target = rng.unit() * total;
        let mut chosen = *top.last().expect("vocabulary has permitted tokens");
        for &id in &top {
            target -= dist[id];
            if target < 0.0 {
                chosen = id;
                break;
            }
        }
        log_prob += dist[chosen].ln();
        steps.push(StepTrace { candidates: top, chosen, distribution_sum: dist.iter().sum() });
        if chosen == EOS {
            return finish(model, ids, log_prob, true, steps);
        }
        ids.push(chosen);
    }
    finish(model, ids, log_prob, false, steps)
}

/// Deterministic argmax decoding, ties to the lower id.
pub fn greedy<S: AsRef<str>>(model: &Seq2SeqModel, input: &[S], max_length: usize) -> Generation {
    let memory = model.memory(&encode_input(&model.vocab, input));
    let mut ids = Vec::new();
    let mut steps = Vec::new();
    let mut log_prob = 0.0;
    for _ in 0..step_limit(model, max_length) {
        let dist = model.step_distribution(&memory, &ids);
        let mut best = None;
        for (id, &p) in dist.iter().enumerate() {
            if Vocabulary::is_banned_output(id) {
                continue;
            }
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((id, p));
            }
        }
        let (chosen, p) = best.expect("vocabulary has permitted tokens");
        log_prob += p.ln();
        steps.push(StepTrace { candidates: vec![chosen], chosen, distribution_sum: dist.iter().sum() });
        if chosen == EOS {
            return finish(model, ids, log_prob, true, steps);
        }
        ids.push(chosen);
    }
    finish(model, ids, log_prob, false, steps)
}

/// `n` independent samples, each from its own stream derived from the seed,
/// ranked by length-penalized score (stable for ties).
pub fn generate_candidates<S: AsRef<str>>(model: &Seq2SeqModel, input: &[S], dcfg: &DecoderConfig, n: usize) -> Vec<Generation> {
    let mut out: Vec<Generation> = (0..n)
        .map(|i| {
            let mut rng = StreamRng::derived(dcfg.seed, 3, i as u64);
            sample_with(model, input, dcfg, &mut rng)
        })
        .collect();
    out.sort_by(|a, b| b.score(dcfg.length_penalty).total_cmp(&a.score(dcfg.length_penalty)));
    out
}
