//! Frequency-stratified test sets and the train/validation remainder.
//!
//! Concept frequencies are counted once over the whole dataset. Pairs are
//! ordered by concept-set frequency (ties by id), the top and bottom
//! fractions form the high and low strata, a fixed number of pairs is drawn
//! uniformly from each, and everything else is shuffled into validation and
//! train. All draws come from one [`StreamRng`] in that order.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{ConceptSentencePair, ConceptSet};
use crate::rng::StreamRng;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SplitError {
    #[error("{stratum} stratum holds {available} pairs but {requested} were requested")]
    InsufficientData { stratum: &'static str, available: usize, requested: usize },
    #[error("invalid split spec: {0}")]
    InvalidSpec(String),
    #[error("duplicate pair id `{0}`")]
    DuplicateId(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyTable {
    counts: BTreeMap<String, u64>,
}

impl FrequencyTable {
    pub fn get(&self, lemma: &str) -> u64 {
        self.counts.get(lemma).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// Number of pairs whose concept set contains each lemma.
pub fn concept_frequencies(pairs: &[ConceptSentencePair]) -> FrequencyTable {
    let mut counts = BTreeMap::new();
    for pair in pairs {
        for lemma in pair.concepts.iter() {
            *counts.entry(lemma.to_string()).or_insert(0) += 1;
        }
    }
    FrequencyTable { counts }
}

pub fn set_frequency(concepts: &ConceptSet, table: &FrequencyTable) -> u64 {
    concepts.iter().map(|c| table.get(c)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub high_fraction: f64,
    pub low_fraction: f64,
    pub test_per_stratum: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { high_fraction: 0.10, low_fraction: 0.10, test_per_stratum: 500, val_fraction: 0.10, seed: 13 }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<ConceptSentencePair>,
    pub validation: Vec<ConceptSentencePair>,
    pub test_high: Vec<ConceptSentencePair>,
    pub test_low: Vec<ConceptSentencePair>,
}

impl DatasetSplit {
    pub fn total(&self) -> usize {
        self.train.len() + self.validation.len() + self.test_high.len() + self.test_low.len()
    }

    /// `(name, pairs)` in the order the CLI writes them.
    pub fn parts(&self) -> [(&'static str, &[ConceptSentencePair]); 4] {
        [("train", &self.train), ("validation", &self.validation), ("test_high", &self.test_high), ("test_low", &self.test_low)]
    }
}

fn check_fraction(name: &str, value: f64) -> Result<(), SplitError> {
    if !(0.0..=1.0).contains(&value) || value.is_nan() {
        return Err(SplitError::InvalidSpec(format!("{name} must lie in [0, 1], got {value}")));
    }
    Ok(())
}

pub fn stratified_split(pairs: &[ConceptSentencePair], spec: &SplitSpec) -> Result<DatasetSplit, SplitError> {
    check_fraction("high_fraction", spec.high_fraction)?;
    check_fraction("low_fraction", spec.low_fraction)?;
    check_fraction("val_fraction", spec.val_fraction)?;

    let mut ids = HashSet::with_capacity(pairs.len());
    if let Some(dup) = pairs.iter().find(|p| !ids.insert(p.id.as_str())) {
        return Err(SplitError::DuplicateId(dup.id.clone()));
    }

    let n = pairs.len();
    let high_size = (spec.high_fraction * n as f64).ceil() as usize;
    let low_size = (spec.low_fraction * n as f64).ceil() as usize;
    if spec.test_per_stratum > 0 && high_size + low_size > n {
        return Err(SplitError::InvalidSpec(format!("high ({high_size}) and low ({low_size}) strata overlap in {n} pairs")));
    }
    if high_size < spec.test_per_stratum {
        return Err(SplitError::InsufficientData { stratum: "high", available: high_size, requested: spec.test_per_stratum });
    }
    if low_size < spec.test_per_stratum {
        return Err(SplitError::InsufficientData { stratum: "low", available: low_size, requested: spec.test_per_stratum });
    }

    let table = concept_frequencies(pairs);
    let mut order: Vec<(u64, &ConceptSentencePair)> = pairs.iter().map(|p| (set_frequency(&p.concepts, &table), p)).collect();
    order.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));

    let mut rng = StreamRng::new(spec.seed);
    let mut taken = vec![false; n];
    let draw = |offset: usize, size: usize, rng: &mut StreamRng, taken: &mut Vec<bool>| {
        rng.sample_indices(size, spec.test_per_stratum)
            .into_iter()
            .map(|i| {
                taken[offset + i] = true;
                order[offset + i].1.clone()
            })
            .collect::<Vec<_>>()
    };
    let test_high = if spec.test_per_stratum > 0 { draw(n - high_size, high_size, &mut rng, &mut taken) } else { Vec::new() };
    let test_low = if spec.test_per_stratum > 0 { draw(0, low_size, &mut rng, &mut taken) } else { Vec::new() };

    let mut remainder: Vec<ConceptSentencePair> = order.iter().zip(&taken).filter(|(_, &t)| !t).map(|((_, p), _)| (*p).clone()).collect();
    rng.shuffle(&mut remainder);
    let val_size = (spec.val_fraction * remainder.len() as f64).round() as usize;
    let train = remainder.split_off(val_size);

    Ok(DatasetSplit { train, validation: remainder, test_high, test_low })
}
