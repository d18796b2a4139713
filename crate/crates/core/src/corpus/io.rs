use std::path::Path;

use crate::jsonl::{self, JsonlError, Malformed, ReadMode};

use super::pairs::ConceptSentencePair;
use super::CorpusError;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairsRead {
    pub pairs: Vec<ConceptSentencePair>,
    pub skipped: Vec<Malformed>,
}

fn validate(pair: &ConceptSentencePair) -> Result<(), String> {
    if pair.id.is_empty() {
        return Err("empty id".into());
    }
    if pair.concepts.is_empty() {
        return Err("empty concept list".into());
    }
    if let Some(bad) = pair.concepts.iter().find(|c| c.is_empty() || c.chars().any(|ch| ch.is_whitespace() || ch.is_uppercase())) {
        return Err(format!("concept `{bad}` is not a lowercase lemma"));
    }
    Ok(())
}

/// Reads a dataset file: one JSON object per line with `id`, `concepts`,
/// `sentence` and `source`.
pub fn read_pairs(path: &Path, mode: ReadMode) -> Result<PairsRead, CorpusError> {
    match jsonl::read_records(path, mode, validate) {
        Ok((pairs, skipped)) => Ok(PairsRead { pairs, skipped }),
        Err(JsonlError::Io(e)) => Err(CorpusError::io(path, e)),
        Err(JsonlError::Malformed(m)) => Err(CorpusError::Malformed { path: path.to_path_buf(), line: m.line, reason: m.reason }),
    }
}

pub fn write_pairs(pairs: &[ConceptSentencePair], path: &Path) -> Result<(), CorpusError> {
    jsonl::write_records(path, pairs).map_err(|e| CorpusError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ConceptSet;

    fn pair(i: usize) -> ConceptSentencePair {
        ConceptSentencePair {
            id: format!("id{i}"),
            concepts: ["dog", "chase", "cat"].into_iter().collect::<ConceptSet>(),
            sentence: format!("the dog chased the cat {i} \"times\""),
            source: "test".into(),
        }
    }

    #[test]
    fn write_then_read_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        let pairs: Vec<_> = (0..20).map(pair).collect();
        write_pairs(&pairs, &path).unwrap();
        let back = read_pairs(&path, ReadMode::Strict).unwrap();
        assert_eq!(back.pairs, pairs);
        assert!(back.skipped.is_empty());
    }

    #[test]
    fn malformed_lines_are_reported_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let good = serde_json::to_string(&pair(1)).unwrap();
        let text = format!("{good}\nnot json\n{{\"id\":\"x\",\"concepts\":[],\"sentence\":\"s\",\"source\":\"t\"}}\n{good}\n");
        std::fs::write(&path, text).unwrap();

        match read_pairs(&path, ReadMode::Strict) {
            Err(CorpusError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected malformed error, got {other:?}"),
        }
        let lenient = read_pairs(&path, ReadMode::Lenient).unwrap();
        assert_eq!(lenient.pairs.len(), 2);
        assert_eq!(lenient.skipped.iter().map(|m| m.line).collect::<Vec<_>>(), [2, 3]);
    }
}
