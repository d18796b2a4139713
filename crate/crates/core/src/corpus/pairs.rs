use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::lexicon::Lexicon;
use super::text::Sentence;

/// An unordered, deduplicated set of concept lemmas.
///
/// Backed by a sorted set so iteration (and therefore serialization) is
/// canonical regardless of insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptSet(BTreeSet<String>);

impl ConceptSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, lemma: impl Into<String>) -> bool {
        self.0.insert(lemma.into())
    }

    pub fn contains(&self, lemma: &str) -> bool {
        self.0.contains(lemma)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl<S: Into<String>> FromIterator<S> for ConceptSet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        ConceptSet(iter.into_iter().map(Into::into).collect())
    }
}

impl fmt::Display for ConceptSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.iter().collect::<Vec<_>>().join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptSentencePair {
    pub id: String,
    pub concepts: ConceptSet,
    /// Normalized sentence text.
    pub sentence: String,
    pub source: String,
}

impl ConceptSentencePair {
    /// Re-tokenizes the stored sentence.
    pub fn tokens(&self, lexicon: &Lexicon) -> Sentence {
        super::text::tokenize(&self.sentence, lexicon)
    }

    /// True when every concept lemma occurs among the sentence's token lemmas.
    pub fn is_grounded(&self, lexicon: &Lexicon) -> bool {
        let sentence = self.tokens(lexicon);
        self.concepts.iter().all(|c| sentence.has_lemma(c))
    }
}

/// Deterministic identifier derived from the normalized sentence text.
pub fn pair_id(normalized: &str) -> String {
    let digest = Sha256::digest(normalized.as_bytes());
    format!("p{}", hex::encode(&digest[..8]))
}

/// Lemmas of non-stopword noun, verb and adjective tokens.
pub fn extract_concepts(sentence: &Sentence, lexicon: &Lexicon) -> ConceptSet {
    sentence
        .tokens
        .iter()
        .filter(|t| t.pos.is_content() && !lexicon.is_stopword(&t.lemma) && !lexicon.is_stopword(&t.surface))
        .map(|t| t.lemma.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairOptions {
    pub min_concepts: usize,
    pub max_concepts: usize,
    pub source: String,
}

impl Default for PairOptions {
    fn default() -> Self {
        Self { min_concepts: 2, max_concepts: 5, source: "corpus".to_string() }
    }
}

/// Emits one pair per distinct sentence whose concept count lies within
/// `[min_concepts, max_concepts]`. Sentences repeating an earlier normalized
/// text are dropped.
pub fn build_pairs(sentences: &[Sentence], lexicon: &Lexicon, options: &PairOptions) -> Vec<ConceptSentencePair> {
    assert!(options.min_concepts >= 1, "min_concepts must be at least 1");
    assert!(options.max_concepts >= options.min_concepts, "max_concepts below min_concepts");
    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    for sentence in sentences {
        let text = sentence.text();
        if text.is_empty() || !seen.insert(text.clone()) {
            continue;
        }
        let concepts = extract_concepts(sentence, lexicon);
        if concepts.len() < options.min_concepts || concepts.len() > options.max_concepts {
            continue;
        }
        pairs.push(ConceptSentencePair { id: pair_id(&text), concepts, sentence: text, source: options.source.clone() });
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::text::tokenize;
    use proptest::prelude::*;

    fn lex() -> &'static Lexicon {
        Lexicon::bundled()
    }

    fn concepts(text: &str) -> Vec<String> {
        extract_concepts(&tokenize(text, lex()), lex()).iter().map(String::from).collect()
    }

    #[test]
    fn extraction_examples() {
        assert_eq!(concepts("the dog chased the cat"), ["cat", "chase", "dog"]);
        assert!(concepts("the of and").is_empty());
        assert_eq!(concepts("a cat saw a cat"), ["cat", "see"]);
        // stopword verbs never become concepts
        assert_eq!(concepts("the dog is happy"), ["dog", "happy"]);
    }

    #[test]
    fn dedup_matches_brute_force_scan() {
        let s = tokenize("a cat saw a cat and the cat saw a dog", lex());
        let mut brute: Vec<String> = Vec::new();
        for t in &s.tokens {
            if t.pos.is_content() && !lex().is_stopword(&t.lemma) && !brute.contains(&t.lemma) {
                brute.push(t.lemma.clone());
            }
        }
        brute.sort();
        let got: Vec<String> = extract_concepts(&s, lex()).iter().map(String::from).collect();
        assert_eq!(got, brute);
    }

    #[test]
    fn build_pairs_filters_by_concept_count() {
        let opts = PairOptions::default();
        let one = build_pairs(&[tokenize("the dog chased the cat", lex())], lex(), &opts);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].concepts.len(), 3);
        assert!(one[0].is_grounded(lex()));

        assert!(build_pairs(&[tokenize("the of and", lex())], lex(), &opts).is_empty());

        let six = "the old dog chased the small cat near the river";
        assert_eq!(concepts(six).len(), 6);
        assert!(build_pairs(&[tokenize(six, lex())], lex(), &opts).is_empty());
    }

    #[test]
    fn duplicate_sentences_collapse_and_ids_are_stable() {
        let opts = PairOptions::default();
        let s = tokenize("the dog chased the cat", lex());
        let pairs = build_pairs(&[s.clone(), s], lex(), &opts);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].id, pair_id("the dog chased the cat"));
        assert_ne!(pair_id("a"), pair_id("b"));
    }

    proptest! {
        #[test]
        fn extraction_ignores_word_order(perm in proptest::sample::subsequence(
            vec!["dog", "chased", "the", "cat", "near", "river", "happy", "saw"], 0..8).prop_shuffle()) {
            let text = perm.join(" ");
            let mut sorted = perm.clone();
            sorted.sort();
            let a = extract_concepts(&tokenize(&text, lex()), lex());
            let b = extract_concepts(&tokenize(&sorted.join(" "), lex()), lex());
            prop_assert_eq!(a, b);
        }

        #[test]
        fn emitted_pairs_are_grounded(words in proptest::collection::vec(proptest::sample::select(
            vec!["the", "dog", "cat", "chased", "ran", "in", "park", "big", "slept", "a", "bird", "sees"]), 1..10)) {
            let s = tokenize(&words.join(" "), lex());
            for pair in build_pairs(std::slice::from_ref(&s), lex(), &PairOptions::default()) {
                for c in pair.concepts.iter() {
                    prop_assert!(s.tokens.iter().any(|t| t.lemma == c));
                }
            }
        }
    }
}
