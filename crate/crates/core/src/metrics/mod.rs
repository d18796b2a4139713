//! Reference-free metrics over batches of generated sentences.

mod lm;
mod report;
mod tfidf;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use lm::{LanguageScorer, ModelScorer, TrigramModel, UniformScorer};
pub use report::{render_table, report, MetricReport};
pub use tfidf::TfidfTable;

use crate::cefr::CefrLevel;
use crate::controls::{LabeledConcept, LabeledConceptSet};
use crate::corpus::{Lexicon, Sentence};
use crate::jsonl::{read_records, write_records, JsonlError, Malformed, ReadMode};
use crate::srl::{RoleLabel, RoleParser};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("batch file {path}: {source}")]
    Batch { path: String, source: JsonlError },
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl MetricsError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        MetricsError::Io { path: path.display().to_string(), source }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationRecord {
    pub input: LabeledConceptSet,
    pub output: Sentence,
    pub model_tag: String,
}

/// On-disk form of a [`GenerationRecord`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BatchRecord {
    pub input: BatchInput,
    pub output: String,
    pub model_tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchInput {
    pub concepts: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub roles: BTreeMap<String, RoleLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cefr: Option<CefrLevel>,
}

impl BatchInput {
    pub fn from_labeled(input: &LabeledConceptSet) -> BatchInput {
        BatchInput {
            concepts: input.items().iter().map(|i| i.concept.clone()).collect(),
            roles: input.items().iter().filter_map(|i| Some((i.concept.clone(), i.role?))).collect(),
            cefr: input.cefr(),
        }
    }

    pub fn to_labeled(&self) -> Result<LabeledConceptSet, String> {
        if let Some(stray) = self.roles.keys().find(|c| !self.concepts.contains(c)) {
            return Err(format!("role given for `{stray}`, which is not among the concepts"));
        }
        let mut concepts = self.concepts.clone();
        concepts.sort();
        let items = concepts.into_iter().map(|concept| LabeledConcept { role: self.roles.get(&concept).copied(), concept }).collect();
        LabeledConceptSet::new(items, self.cefr).map_err(|e| e.to_string())
    }
}

impl BatchRecord {
    pub fn from_record(record: &GenerationRecord) -> BatchRecord {
        BatchRecord { input: BatchInput::from_labeled(&record.input), output: record.output.text(), model_tag: record.model_tag.clone() }
    }

    pub fn to_record(&self, lexicon: &Lexicon) -> Result<GenerationRecord, String> {
        Ok(GenerationRecord {
            input: self.input.to_labeled()?,
            output: Sentence::parse(&self.output, lexicon),
            model_tag: self.model_tag.clone(),
        })
    }
}

pub fn read_batch(path: &Path, lexicon: &Lexicon, mode: ReadMode) -> Result<(Vec<GenerationRecord>, Vec<Malformed>), MetricsError> {
    let (raw, skipped) = read_records(path, mode, |r: &BatchRecord| r.to_record(lexicon).map(drop))
        .map_err(|source| MetricsError::Batch { path: path.display().to_string(), source })?;
    let records = raw.iter().map(|r| r.to_record(lexicon).expect("validated while reading")).collect();
    Ok((records, skipped))
}

pub fn write_batch(path: &Path, records: &[GenerationRecord]) -> Result<(), MetricsError> {
    let raw: Vec<BatchRecord> = records.iter().map(BatchRecord::from_record).collect();
    write_records(path, &raw).map_err(|e| MetricsError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Coverage {
    /// Percentage of outputs containing every input concept lemma.
    pub all: f64,
    /// Percentage containing at least one.
    pub any: f64,
}

pub fn coverage(records: &[GenerationRecord]) -> Result<Coverage, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let (mut all, mut any) = (0usize, 0usize);
    for r in records {
        let lemmas: HashSet<&str> = r.output.tokens.iter().map(|t| t.lemma.as_str()).collect();
        let found = r.input.items().iter().filter(|i| lemmas.contains(i.concept.as_str())).count();
        all += usize::from(found == r.input.len());
        any += usize::from(found > 0);
    }
    let n = records.len() as f64;
    Ok(Coverage { all: 100.0 * all as f64 / n, any: 100.0 * any as f64 / n })
}

/// Mean number of non-punctuation tokens.
pub fn mean_length(sentences: &[Sentence]) -> Result<f64, MetricsError> {
    if sentences.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    Ok(sentences.iter().map(Sentence::word_count).sum::<usize>() as f64 / sentences.len() as f64)
}

/// `exp(-Σ log-likelihood / Σ words)` under `scorer`.
pub fn perplexity(sentences: &[Sentence], scorer: &dyn LanguageScorer) -> Result<f64, MetricsError> {
    let mut ll = 0.0;
    let mut words = 0usize;
    for s in sentences {
        let w: Vec<&str> = s.words().map(|t| t.surface.as_str()).collect();
        if w.is_empty() {
            continue;
        }
        ll += scorer.log_likelihood(&w);
        words += w.len();
    }
    if words == 0 {
        return Err(MetricsError::EmptyBatch);
    }
    Ok((-ll / words as f64).exp())
}

/// Per-sentence mean of `tf · idf` over non-stopword words, averaged over the
/// batch; `tf` is the word's count over the sentence length in words.
pub fn diversity(sentences: &[Sentence], table: &TfidfTable, lexicon: &Lexicon) -> Result<f64, MetricsError> {
    if sentences.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let total: f64 = sentences.iter().map(|s| sentence_tfidf(s, table, lexicon)).sum();
    Ok(total / sentences.len() as f64)
}

pub fn sentence_tfidf(sentence: &Sentence, table: &TfidfTable, lexicon: &Lexicon) -> f64 {
    let words: Vec<&str> = sentence.words().map(|t| t.lemma.as_str()).collect();
    let content: Vec<&str> =
        sentence.words().filter(|t| !lexicon.is_stopword(&t.lemma) && !lexicon.is_stopword(&t.surface)).map(|t| t.lemma.as_str()).collect();
    if content.is_empty() {
        return 0.0;
    }
    let len = words.len() as f64;
    let sum: f64 = content
        .iter()
        .map(|w| {
            let tf = words.iter().filter(|x| *x == w).count() as f64 / len;
            tf * table.idf(w)
        })
        .sum();
    sum / content.len() as f64
}

/// Roles reported by [`srl_overlap`].
pub const OVERLAP_ROLES: [RoleLabel; 4] = [RoleLabel::V, RoleLabel::Arg0, RoleLabel::Arg1, RoleLabel::ArgM];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RoleOverlap {
    pub hits: usize,
    pub total: usize,
}

impl RoleOverlap {
    pub fn percent(&self) -> f64 {
        100.0 * self.hits as f64 / self.total as f64
    }
}

/// For each reported role, the share of input items labeled with it whose
/// concept holds that role (in any frame) in the parsed output. Roles never
/// requested are absent from the map.
pub fn srl_overlap(records: &[GenerationRecord], parser: &dyn RoleParser) -> BTreeMap<RoleLabel, RoleOverlap> {
    let mut out: BTreeMap<RoleLabel, RoleOverlap> = BTreeMap::new();
    for r in records {
        let requested: Vec<_> =
            r.input.items().iter().filter_map(|i| i.role.filter(|role| OVERLAP_ROLES.contains(role)).map(|role| (i, role))).collect();
        if requested.is_empty() {
            continue;
        }
        let parse = parser.parse(&r.output).unwrap_or_default();
        for (item, role) in requested {
            let hit = r
                .output
                .tokens
                .iter()
                .enumerate()
                .any(|(pos, t)| t.lemma == item.concept && parse.frames.iter().any(|f| f.role(pos) == Some(role)));
            let entry = out.entry(role).or_default();
            entry.total += 1;
            entry.hits += usize::from(hit);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controls::parse_control_string;
    use crate::srl::TemplateParser;

    fn lex() -> &'static Lexicon {
        Lexicon::bundled()
    }

    fn record(input: &str, output: &str) -> GenerationRecord {
        GenerationRecord { input: parse_control_string(input).unwrap(), output: Sentence::parse(output, lex()), model_tag: "m".into() }
    }

    #[test]
    fn coverage_examples() {
        let full = record("cat chase dog", "the dog chased the cat");
        let none = record("cat chase dog", "a bird sang");
        let part = record("cat chase dog", "the dog slept");
        let c = coverage(std::slice::from_ref(&full)).unwrap();
        assert_eq!((c.all, c.any), (100.0, 100.0));
        let c = coverage(&[none]).unwrap();
        assert_eq!((c.all, c.any), (0.0, 0.0));
        let c = coverage(&[full, part]).unwrap();
        assert_eq!((c.all, c.any), (50.0, 100.0));
        assert!(matches!(coverage(&[]), Err(MetricsError::EmptyBatch)));
    }

    #[test]
    fn lengths_and_uniform_perplexity() {
        let s = vec![Sentence::parse("the dog chased the cat.", lex())];
        assert_eq!(mean_length(&s).unwrap(), 5.0);
        assert!(mean_length(&[]).is_err());
        let ppl = perplexity(&s, &UniformScorer { vocab_size: 40 }).unwrap();
        assert!((ppl - 40.0).abs() < 1e-9);
        let ppl = perplexity(&s, &UniformScorer { vocab_size: 1 }).unwrap();
        assert_eq!(ppl, 1.0);
    }

    #[test]
    fn tfidf_single_word_and_stopwords() {
        let table = TfidfTable::from_idf([("zebra".to_string(), 2.0)], 10);
        let s = Sentence::parse("zebra", lex());
        assert!((diversity(std::slice::from_ref(&s), &table, lex()).unwrap() - 2.0).abs() < 1e-12);
        let stop = Sentence::parse("the of and", lex());
        assert_eq!(sentence_tfidf(&stop, &table, lex()), 0.0);
        let doubled = diversity(&[s.clone(), stop.clone(), s.clone(), stop.clone()], &table, lex()).unwrap();
        assert_eq!(doubled, diversity(&[s, stop], &table, lex()).unwrap());
    }

    #[test]
    fn srl_overlap_examples() {
        let parser = TemplateParser;
        let ok = record("cat|ARG1 chase|V dog|ARG0", "the dog chased the cat");
        let o = srl_overlap(&[ok], &parser);
        for role in [RoleLabel::V, RoleLabel::Arg0, RoleLabel::Arg1] {
            assert_eq!(o[&role].percent(), 100.0);
        }
        assert!(!o.contains_key(&RoleLabel::ArgM));
        let swapped = record("cat|ARG1 chase|V dog|ARG0", "the cat chased the dog");
        let o = srl_overlap(&[swapped], &parser);
        assert_eq!(o[&RoleLabel::Arg0].percent(), 0.0);
        assert_eq!(o[&RoleLabel::Arg1].percent(), 0.0);
        assert_eq!(o[&RoleLabel::V].percent(), 100.0);
    }

    #[test]
    fn batch_file_round_trip() {
        let records = vec![record("<CEFR:B2> cat|ARG1 chase|V dog", "the dog chased the cat."), record("bird sing", "a bird sang")];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gen.jsonl");
        write_batch(&path, &records).unwrap();
        let (back, skipped) = read_batch(&path, lex(), ReadMode::Strict).unwrap();
        assert!(skipped.is_empty());
        assert_eq!(back, records);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().next().unwrap().contains(r#""roles":{"cat":"ARG1","chase":"V"}"#), "{text}");
    }
}
