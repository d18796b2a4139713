//! Shared fixtures for the benchmarks.

use ctrlgen::controls::LabeledConceptSet;
use ctrlgen::corpus::{build_pairs, ConceptSentencePair, Lexicon, PairOptions, Sentence};
use ctrlgen::seq2seq::{build_vocabulary, Example, ModelConfig, Seq2SeqModel};
use ctrlgen::toy::{parse_all, ANIMALS};

pub fn toy_sentences(n: usize) -> Vec<Sentence> {
    parse_all(&ANIMALS.sample(n, 1), Lexicon::bundled())
}

pub fn toy_pairs(n: usize) -> Vec<ConceptSentencePair> {
    build_pairs(&toy_sentences(n), Lexicon::bundled(), &PairOptions::default())
}

pub fn toy_examples(n: usize) -> Vec<Example> {
    toy_pairs(n)
        .iter()
        .map(|p| Example::from_labeled(&LabeledConceptSet::from_concepts(&p.concepts), &p.tokens(Lexicon::bundled())))
        .collect()
}

/// An untrained model over the toy vocabulary.
pub fn toy_model(width: usize, layers: usize) -> (Seq2SeqModel, Vec<Example>) {
    let examples = toy_examples(200);
    let config =
        ModelConfig { layers, attention_heads: 2, model_width: width, feed_forward_width: 2 * width, dropout_rate: 0.0, max_positions: 32 };
    let model = Seq2SeqModel::new(config, build_vocabulary(&examples), 1).expect("valid config");
    (model, examples)
}
