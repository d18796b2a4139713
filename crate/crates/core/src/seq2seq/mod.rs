//! Encoder-decoder transformer trained from scratch, with control codes
//! carried entirely in the input sequence.

mod checkpoint;
mod decode;
pub mod graph;
mod model;
mod train;
pub mod vocab;

pub use checkpoint::{read_checkpoint, write_checkpoint, FORMAT_VERSION, MAGIC};
pub use decode::{generate, generate_candidates, greedy, DecodeStrategy, DecoderConfig, Generation, StepTrace};
pub use model::{encode_input, EncodedInput, ModelConfig, Seq2SeqModel};
pub use train::{
    build_vocabulary, continue_pretrain, mean_loss, train, train_controlled, train_with_vocabulary, Adam, EpochStats, Example,
    TrainingConfig, TrainingLog,
};
pub use vocab::Vocabulary;

#[derive(Debug, thiserror::Error)]
pub enum Seq2SeqError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("tokens missing from the model vocabulary: {}", .0.join(", "))]
    VocabularyMismatch(Vec<String>),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Seq2SeqModel {
    /// Gradient of the summed NLL of one example, and the loss itself.
    /// Dropout is off.
    pub fn loss_and_gradients<S: AsRef<str>, T: AsRef<str>>(&self, input: &[S], target: &[T]) -> (f64, graph::Gradients) {
        let encoded = encode_input(&self.vocab, input);
        let target = self.encode_target(target);
        let mut tape = graph::Tape::new(&self.params);
        let loss = self.loss_on(&mut tape, &encoded, &target, None);
        (tape.scalar(loss), tape.backward(loss, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro() -> ModelConfig {
        ModelConfig { layers: 1, attention_heads: 2, model_width: 8, feed_forward_width: 16, dropout_rate: 0.0, max_positions: 16 }
    }

    fn toy() -> Vec<Example> {
        vec![
            Example::new(["dog|ARG0", "chase|V", "cat|ARG1"], ["the", "dog", "chased", "the", "cat", "."]),
            Example::new(["<CEFR:A1>", "cat", "sleep"], ["the", "cat", "slept", "."]),
        ]
    }

    #[test]
    fn model_gradients_match_finite_differences() {
        let data = toy();
        let vocab = build_vocabulary(&data);
        let mut model = Seq2SeqModel::new(micro(), vocab, 5).unwrap();
        let e = &data[0];
        let (_, grads) = model.loss_and_gradients(&e.input, &e.target);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for id in 0..model.params.len() {
            let n = model.params.get(id).len();
            // a handful of entries per tensor keeps the check quick
            for flat in (0..n).step_by((n / 5).max(1)) {
                let (r, c) = (flat / model.params.get(id).ncols(), flat % model.params.get(id).ncols());
                let orig = model.params.get(id)[[r, c]];
                model.params.get_mut(id)[[r, c]] = orig + h;
                let plus = -model.log_likelihood(&e.input, &e.target);
                model.params.get_mut(id)[[r, c]] = orig - h;
                let minus = -model.log_likelihood(&e.input, &e.target);
                model.params.get_mut(id)[[r, c]] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let analytic = grads.get(id).map_or(0.0, |g| g[[r, c]]);
                if analytic.abs().max(numeric.abs()) < 1e-7 {
                    continue;
                }
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
                worst = worst.max(rel);
                assert!(rel < 1e-3, "{} [{r},{c}]: {analytic} vs {numeric}", model.params.name(id));
            }
        }
        assert!(worst < 1e-3);
    }

    #[test]
    fn top1_sampling_is_greedy_and_seeded_sampling_repeats() {
        let data = toy();
        let model = Seq2SeqModel::new(micro(), build_vocabulary(&data), 9).unwrap();
        let cfg = DecoderConfig { k: 1, max_length: 10, ..Default::default() };
        let g = greedy(&model, &data[0].input, 10);
        assert_eq!(generate(&model, &data[0].input, &cfg).ids, g.ids);
        let cfg = DecoderConfig { k: 5, max_length: 10, seed: 4, ..Default::default() };
        let a = generate(&model, &data[1].input, &cfg);
        assert_eq!(a, generate(&model, &data[1].input, &cfg));
        for step in &a.steps {
            assert!(step.candidates.len() <= 5 && step.candidates.contains(&step.chosen));
            assert!((step.distribution_sum - 1.0).abs() < 1e-9);
        }
        assert!(a.ids.len() <= 10);
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let data = toy();
        let model = Seq2SeqModel::new(micro(), build_vocabulary(&data), 2).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&model, &mut bytes).unwrap();
        let back = read_checkpoint(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, model);
        let a = model.log_likelihood(&data[0].input, &data[0].target);
        let b = back.log_likelihood(&data[0].input, &data[0].target);
        assert_eq!(a.to_bits(), b.to_bits());
        bytes[0] = b'X';
        assert!(read_checkpoint(&mut bytes.as_slice()).is_err());
        let mut truncated = Vec::new();
        write_checkpoint(&model, &mut truncated).unwrap();
        truncated.truncate(truncated.len() - 3);
        assert!(read_checkpoint(&mut truncated.as_slice()).is_err());
    }

    #[test]
    fn training_reduces_loss_deterministically() {
        let data = toy();
        let tcfg = TrainingConfig { epochs: 30, batch_size: 2, learning_rate: 3e-3, seed: 1, clip_norm: 1.0 };
        let cfg = ModelConfig { model_width: 16, feed_forward_width: 32, ..micro() };
        let (m1, log1) = train(&data, &[], &tcfg, &cfg).unwrap();
        let (m2, log2) = train(&data, &[], &tcfg, &cfg).unwrap();
        assert_eq!(log1, log2);
        assert_eq!(m1, m2);
        assert!(log1.final_train_loss().unwrap() < log1.initial_train_loss);
        assert!(matches!(train(&[], &[], &tcfg, &cfg), Err(Seq2SeqError::EmptyDataset)));
    }

    #[test]
    fn continue_pretrain_rejects_unknown_tokens_and_handles_empty() {
        let data = toy();
        let model = Seq2SeqModel::new(micro(), build_vocabulary(&data), 2).unwrap();
        let (same, _) = continue_pretrain(&model, &[], &[], &TrainingConfig::continued()).unwrap();
        assert_eq!(same, model);
        let foreign = vec![Example::new(["zebra"], ["a", "zebra"])];
        assert!(matches!(
            continue_pretrain(&model, &foreign, &[], &TrainingConfig::continued()),
            Err(Seq2SeqError::VocabularyMismatch(t)) if t == ["a", "zebra"]
        ));
    }
}
