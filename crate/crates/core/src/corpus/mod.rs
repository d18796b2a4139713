//! Corpus ingestion: text normalization, lexicon-backed tokenization,
//! concept extraction and the shared dataset file format.

mod io;
mod lexicon;
mod pairs;
mod text;

use std::path::{Path, PathBuf};

pub use io::{read_pairs, write_pairs, PairsRead};
pub use lexicon::{LexEntry, Lexicon, Pos};
pub use pairs::{build_pairs, extract_concepts, pair_id, ConceptSentencePair, ConceptSet, PairOptions};
pub use text::{is_punctuation, normalize_text, tokenize, Sentence, Token};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {reason}")]
    Malformed { path: PathBuf, line: usize, reason: String },
    #[error("lexicon: {0}")]
    Lexicon(String),
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io { path: path.to_path_buf(), source }
    }
}

/// Reads a plain-text corpus with one sentence per line.
pub fn read_sentences(path: &Path, lexicon: &Lexicon) -> Result<Vec<Sentence>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    Ok(text.lines().map(normalize_text).filter(|line| !line.is_empty()).map(|line| tokenize(&line, lexicon)).collect())
}
