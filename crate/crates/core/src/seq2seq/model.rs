use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::graph::{log_sum_exp, softmax_in_place, ParamId, ParamStore, Tape, Var};
use super::vocab::{self, Vocabulary, BOS, EOS};
use super::Seq2SeqError;
use crate::cefr::CefrLevel;
use crate::controls::ROLE_DELIMITER;
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct ModelConfig {
    pub layers: usize,
    pub attention_heads: usize,
    pub model_width: usize,
    pub feed_forward_width: usize,
    pub dropout_rate: f64,
    pub max_positions: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { layers: 2, attention_heads: 4, model_width: 128, feed_forward_width: 256, dropout_rate: 0.1, max_positions: 128 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), Seq2SeqError> {
        let bad = |reason: &str| Err(Seq2SeqError::ShapeMismatch(reason.to_string()));
        if self.layers == 0 || self.attention_heads == 0 || self.model_width == 0 || self.feed_forward_width == 0 {
            return bad("layers, heads and widths must be positive");
        }
        if self.max_positions < 2 {
            return bad("max_positions must be at least 2");
        }
        if !self.model_width.is_multiple_of(self.attention_heads) {
            return bad("model width must be divisible by the number of attention heads");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout rate must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.model_width / self.attention_heads
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Debug, Clone, Copy)]
struct FeedForward {
    up: Linear,
    down: Linear,
}

#[derive(Debug, Clone, Copy)]
struct EncoderLayer {
    attn_norm: Norm,
    attn: Attention,
    ff_norm: Norm,
    ff: FeedForward,
}

#[derive(Debug, Clone, Copy)]
struct DecoderLayer {
    self_norm: Norm,
    self_attn: Attention,
    cross_norm: Norm,
    cross_attn: Attention,
    ff_norm: Norm,
    ff: FeedForward,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    embedding: ParamId,
    encoder_positions: ParamId,
    decoder_positions: ParamId,
    encoder: Vec<EncoderLayer>,
    encoder_norm: Norm,
    decoder: Vec<DecoderLayer>,
    decoder_norm: Norm,
    output: Linear,
}

/// Registers every tensor in a fixed order. `init` supplies the initial value
/// of each `(name, rows, cols, kind)`.
struct Builder<'a, F: FnMut(&str, usize, usize, Init) -> Array2<f64>> {
    store: &'a mut ParamStore,
    init: F,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Init {
    Embedding,
    Weight,
    Zeros,
    Ones,
}

impl<F: FnMut(&str, usize, usize, Init) -> Array2<f64>> Builder<'_, F> {
    fn tensor(&mut self, name: String, rows: usize, cols: usize, kind: Init) -> ParamId {
        let value = (self.init)(&name, rows, cols, kind);
        self.store.add(name, value)
    }

    fn linear(&mut self, name: &str, input: usize, output: usize) -> Linear {
        Linear {
            w: self.tensor(format!("{name}.w"), input, output, Init::Weight),
            b: self.tensor(format!("{name}.b"), 1, output, Init::Zeros),
        }
    }

    fn norm(&mut self, name: &str, width: usize) -> Norm {
        Norm {
            gamma: self.tensor(format!("{name}.gamma"), 1, width, Init::Ones),
            beta: self.tensor(format!("{name}.beta"), 1, width, Init::Zeros),
        }
    }

    fn attention(&mut self, name: &str, d: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }

    fn feed_forward(&mut self, name: &str, d: usize, ff: usize) -> FeedForward {
        FeedForward { up: self.linear(&format!("{name}.up"), d, ff), down: self.linear(&format!("{name}.down"), ff, d) }
    }
}

pub(crate) fn build_layout(
    config: &ModelConfig,
    vocab_size: usize,
    store: &mut ParamStore,
    init: impl FnMut(&str, usize, usize, Init) -> Array2<f64>,
) -> Layout {
    let d = config.model_width;
    let ff = config.feed_forward_width;
    let mut b = Builder { store, init };
    let embedding = b.tensor("embedding".into(), vocab_size, d, Init::Embedding);
    let encoder_positions = b.tensor("encoder.positions".into(), config.max_positions, d, Init::Embedding);
    let decoder_positions = b.tensor("decoder.positions".into(), config.max_positions, d, Init::Embedding);
    let encoder = (0..config.layers)
        .map(|l| EncoderLayer {
            attn_norm: b.norm(&format!("encoder.{l}.attn_norm"), d),
            attn: b.attention(&format!("encoder.{l}.attn"), d),
            ff_norm: b.norm(&format!("encoder.{l}.ff_norm"), d),
            ff: b.feed_forward(&format!("encoder.{l}.ff"), d, ff),
        })
        .collect();
    let encoder_norm = b.norm("encoder.norm", d);
    let decoder = (0..config.layers)
        .map(|l| DecoderLayer {
            self_norm: b.norm(&format!("decoder.{l}.self_norm"), d),
            self_attn: b.attention(&format!("decoder.{l}.self_attn"), d),
            cross_norm: b.norm(&format!("decoder.{l}.cross_norm"), d),
            cross_attn: b.attention(&format!("decoder.{l}.cross_attn"), d),
            ff_norm: b.norm(&format!("decoder.{l}.ff_norm"), d),
            ff: b.feed_forward(&format!("decoder.{l}.ff"), d, ff),
        })
        .collect();
    let decoder_norm = b.norm("decoder.norm", d);
    let output = b.linear("output", d, vocab_size);
    Layout { embedding, encoder_positions, decoder_positions, encoder, encoder_norm, decoder, decoder_norm, output }
}

/// Seeded uniform initialization: embeddings with standard deviation
/// `1/sqrt(width)`, weights Glorot-uniform, biases zero, norm gains one.
pub(crate) fn random_init(seed: u64) -> impl FnMut(&str, usize, usize, Init) -> Array2<f64> {
    let mut rng = StreamRng::derived(seed, 0x1417, 0);
    move |_, rows, cols, kind| match kind {
        Init::Zeros => Array2::zeros((rows, cols)),
        Init::Ones => Array2::ones((rows, cols)),
        Init::Embedding | Init::Weight => {
            let bound = if kind == Init::Embedding { (3.0 / cols as f64).sqrt() } else { (6.0 / (rows + cols) as f64).sqrt() };
            Array2::from_shape_simple_fn((rows, cols), || (2.0 * rng.unit() - 1.0) * bound)
        }
    }
}

/// Encoder input after splitting control items: one position per item, with
/// role suffixes folded into their concept's position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedInput {
    pub ids: Vec<usize>,
    /// `(position, role token id)` pairs.
    pub roles: Vec<(usize, usize)>,
}

impl EncodedInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Splits the control-token form (`<CEFR:B1>`, `dog|ARG0`, `cat`) into
/// vocabulary items. Position 0 is always BOS.
pub fn encode_input<S: AsRef<str>>(vocab: &Vocabulary, input: &[S]) -> EncodedInput {
    let mut ids = vec![BOS];
    let mut roles = Vec::new();
    for token in input.iter().map(AsRef::as_ref) {
        if CefrLevel::from_control_token(token).is_some() {
            ids.push(vocab.id(token));
            continue;
        }
        match token.split_once(ROLE_DELIMITER) {
            Some((concept, role)) => {
                ids.push(vocab.id(concept));
                roles.push((ids.len() - 1, vocab.id(&format!("{ROLE_DELIMITER}{role}"))));
            }
            None => ids.push(vocab.id(token)),
        }
    }
    EncodedInput { ids, roles }
}

/// Surface words an input contributes to the vocabulary.
pub fn input_words(input: &[String]) -> impl Iterator<Item = &str> {
    input.iter().map(|t| match t.split_once(ROLE_DELIMITER) {
        Some((concept, _)) if CefrLevel::from_control_token(t).is_none() => concept,
        _ => t.as_str(),
    })
}

#[derive(Debug, Clone)]
pub struct Seq2SeqModel {
    pub(crate) config: ModelConfig,
    pub(crate) vocab: Vocabulary,
    pub(crate) params: ParamStore,
    pub(crate) layout: Layout,
}

impl PartialEq for Seq2SeqModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.vocab == other.vocab && self.params == other.params
    }
}

impl Seq2SeqModel {
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Seq2SeqModel, Seq2SeqError> {
        config.validate()?;
        vocab.validate().map_err(|e| Seq2SeqError::ShapeMismatch(e.to_string()))?;
        let mut params = ParamStore::new();
        let layout = build_layout(&config, vocab.len(), &mut params, random_init(seed));
        Ok(Seq2SeqModel { config, vocab, params, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.element_count()
    }

    /// Token ids for a target sentence, truncated so BOS or EOS still fit.
    pub fn encode_target<S: AsRef<str>>(&self, target: &[S]) -> Vec<usize> {
        let limit = self.config.max_positions - 1;
        target.iter().take(limit).map(|t| self.vocab.id(t.as_ref())).collect()
    }

    pub(crate) fn encode(&self, tape: &mut Tape, input: &EncodedInput, mut rng: Option<&mut StreamRng>) -> Var {
        let l = &self.layout;
        assert!(input.len() <= self.config.max_positions, "input longer than max_positions");
        let table = tape.param(l.embedding);
        let mut x = tape.gather(table, &input.ids);
        if !input.roles.is_empty() {
            let role_ids: Vec<usize> = input.roles.iter().map(|&(_, id)| id).collect();
            let roles = tape.gather(table, &role_ids);
            let mut fold = Array2::zeros((input.len(), role_ids.len()));
            for (j, &(pos, _)) in input.roles.iter().enumerate() {
                fold[[pos, j]] = 1.0;
            }
            let fold = tape.constant(fold);
            let placed = tape.matmul(fold, roles);
            x = tape.add(x, placed);
        }
        let positions = tape.param(l.encoder_positions);
        let pos = tape.gather(positions, &(0..input.len()).collect::<Vec<_>>());
        x = tape.add(x, pos);
        x = self.dropout(tape, x, rng.as_deref_mut());
        for layer in &l.encoder {
            let h = self.norm(tape, x, layer.attn_norm);
            let h = self.attention(tape, h, h, layer.attn, false);
            let h = self.dropout(tape, h, rng.as_deref_mut());
            x = tape.add(x, h);
            let h = self.norm(tape, x, layer.ff_norm);
            let h = self.feed_forward(tape, h, layer.ff);
            let h = self.dropout(tape, h, rng.as_deref_mut());
            x = tape.add(x, h);
        }
        self.norm(tape, x, l.encoder_norm)
    }

    /// Logits for every position of `prefix` (which starts with BOS).
    pub(crate) fn decode(&self, tape: &mut Tape, memory: Var, prefix: &[usize], mut rng: Option<&mut StreamRng>) -> Var {
        let l = &self.layout;
        assert!(prefix.len() <= self.config.max_positions, "prefix longer than max_positions");
        let table = tape.param(l.embedding);
        let mut x = tape.gather(table, prefix);
        let positions = tape.param(l.decoder_positions);
        let pos = tape.gather(positions, &(0..prefix.len()).collect::<Vec<_>>());
        x = tape.add(x, pos);
        x = self.dropout(tape, x, rng.as_deref_mut());
        for layer in &l.decoder {
            let h = self.norm(tape, x, layer.self_norm);
            let h = self.attention(tape, h, h, layer.self_attn, true);
            let h = self.dropout(tape, h, rng.as_deref_mut());
            x = tape.add(x, h);
            let h = self.norm(tape, x, layer.cross_norm);
            let h = self.attention(tape, h, memory, layer.cross_attn, false);
            let h = self.dropout(tape, h, rng.as_deref_mut());
            x = tape.add(x, h);
            let h = self.norm(tape, x, layer.ff_norm);
            let h = self.feed_forward(tape, h, layer.ff);
            let h = self.dropout(tape, h, rng.as_deref_mut());
            x = tape.add(x, h);
        }
        let x = self.norm(tape, x, l.decoder_norm);
        self.linear(tape, x, l.output)
    }

    fn linear(&self, tape: &mut Tape, x: Var, lin: Linear) -> Var {
        let w = tape.param(lin.w);
        let b = tape.param(lin.b);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }

    fn norm(&self, tape: &mut Tape, x: Var, n: Norm) -> Var {
        let g = tape.param(n.gamma);
        let b = tape.param(n.beta);
        tape.layer_norm(x, g, b)
    }

    fn attention(&self, tape: &mut Tape, query: Var, memory: Var, a: Attention, causal: bool) -> Var {
        let q = self.linear(tape, query, a.q);
        let k = self.linear(tape, memory, a.k);
        let v = self.linear(tape, memory, a.v);
        let dh = self.config.head_width();
        let scale = 1.0 / (dh as f64).sqrt();
        let heads: Vec<Var> = (0..self.config.attention_heads)
            .map(|h| {
                let qh = tape.cols(q, h * dh, dh);
                let kh = tape.cols(k, h * dh, dh);
                let vh = tape.cols(v, h * dh, dh);
                let scores = tape.matmul_t(qh, kh);
                let scores = tape.scale(scores, scale);
                let weights = tape.softmax(scores, causal);
                tape.matmul(weights, vh)
            })
            .collect();
        let joined = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads) };
        self.linear(tape, joined, a.o)
    }

    fn feed_forward(&self, tape: &mut Tape, x: Var, ff: FeedForward) -> Var {
        let h = self.linear(tape, x, ff.up);
        let h = tape.gelu(h);
        self.linear(tape, h, ff.down)
    }

    fn dropout(&self, tape: &mut Tape, x: Var, rng: Option<&mut StreamRng>) -> Var {
        match rng {
            Some(rng) if self.config.dropout_rate > 0.0 => tape.dropout(x, self.config.dropout_rate, rng),
            _ => x,
        }
    }

    /// Summed target NLL (including the EOS step) on `tape`; `rng` enables
    /// dropout.
    pub(crate) fn loss_on(&self, tape: &mut Tape, input: &EncodedInput, target: &[usize], rng: Option<&mut StreamRng>) -> Var {
        let mut rng = rng;
        let memory = self.encode(tape, input, rng.as_deref_mut());
        let mut prefix = Vec::with_capacity(target.len() + 1);
        prefix.push(BOS);
        prefix.extend_from_slice(target);
        let logits = self.decode(tape, memory, &prefix, rng);
        let labels: Vec<Option<usize>> = target.iter().copied().chain(std::iter::once(EOS)).map(Some).collect();
        tape.cross_entropy(logits, &labels)
    }

    /// `Σ log P(sᵢ | s<ᵢ, c)` over the target tokens and the closing EOS.
    /// Unknown tokens score as UNK.
    pub fn log_likelihood<S: AsRef<str>, T: AsRef<str>>(&self, input: &[S], target: &[T]) -> f64 {
        let encoded = encode_input(&self.vocab, input);
        let target = self.encode_target(target);
        let mut tape = Tape::new(&self.params);
        let loss = self.loss_on(&mut tape, &encoded, &target, None);
        -tape.scalar(loss)
    }

    /// Log-probability of each target token given its prefix, followed by
    /// that of the closing EOS.
    pub fn token_log_probs<S: AsRef<str>, T: AsRef<str>>(&self, input: &[S], target: &[T]) -> Vec<f64> {
        let encoded = encode_input(&self.vocab, input);
        let target = self.encode_target(target);
        let mut tape = Tape::new(&self.params);
        let memory = self.encode(&mut tape, &encoded, None);
        let mut ids = Vec::with_capacity(target.len() + 1);
        ids.push(BOS);
        ids.extend_from_slice(&target);
        let logits = self.decode(&mut tape, memory, &ids, None);
        let v = tape.value(logits);
        target
            .iter()
            .chain(std::iter::once(&EOS))
            .enumerate()
            .map(|(row, &id)| {
                let row = v.row(row);
                row[id] - log_sum_exp(row.as_slice().expect("row-major logits"))
            })
            .collect()
    }

    /// Full next-token distribution after `prefix` (ids after BOS).
    pub fn next_token_distribution<S: AsRef<str>>(&self, input: &[S], prefix: &[usize]) -> Vec<f64> {
        let encoded = encode_input(&self.vocab, input);
        let memory = self.memory(&encoded);
        self.step_distribution(&memory, prefix)
    }

    /// Encoder states for an input, computed without dropout.
    pub(crate) fn memory(&self, input: &EncodedInput) -> Array2<f64> {
        let mut tape = Tape::new(&self.params);
        let m = self.encode(&mut tape, input, None);
        tape.value(m).clone()
    }

    pub(crate) fn step_distribution(&self, memory: &Array2<f64>, prefix: &[usize]) -> Vec<f64> {
        let mut tape = Tape::new(&self.params);
        let m = tape.constant(memory.clone());
        let mut ids = Vec::with_capacity(prefix.len() + 1);
        ids.push(BOS);
        ids.extend_from_slice(prefix);
        let logits = self.decode(&mut tape, m, &ids, None);
        let v = tape.value(logits);
        let mut last = v.row(v.nrows() - 1).to_vec();
        softmax_in_place(&mut last);
        last
    }

    /// Renders decoded ids as text, attaching punctuation to the previous
    /// word.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for &id in ids {
            let token = self.vocab.token(id);
            if !out.is_empty() && !crate::corpus::is_punctuation(token) {
                out.push(' ');
            }
            out.push_str(token);
        }
        out
    }

    pub fn reserved_ids() -> std::ops::Range<usize> {
        0..vocab::RESERVED
    }
}
