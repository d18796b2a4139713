use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use super::MetricsError;
use crate::corpus::{Lexicon, Sentence};

/// Inverse document frequencies over a reference corpus, keyed by lemma:
/// `idf(w) = max(0, ln(N / (1 + df(w))))`.
///
/// File format: a `# docs N` line, then one `lemma<TAB>idf` line per lemma.
#[derive(Debug, Clone, PartialEq)]
pub struct TfidfTable {
    idf: BTreeMap<String, f64>,
    documents: usize,
}

impl TfidfTable {
    /// Each sentence is one document; stopwords and punctuation are ignored.
    pub fn build(documents: &[Sentence], lexicon: &Lexicon) -> TfidfTable {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for doc in documents {
            let lemmas: BTreeSet<&str> = doc
                .words()
                .filter(|t| !lexicon.is_stopword(&t.lemma) && !lexicon.is_stopword(&t.surface))
                .map(|t| t.lemma.as_str())
                .collect();
            for l in lemmas {
                *df.entry(l.to_string()).or_insert(0) += 1;
            }
        }
        let n = documents.len();
        let idf = df.into_iter().map(|(l, d)| (l, idf_value(n, d))).collect();
        TfidfTable { idf, documents: n }
    }

    pub fn from_idf(idf: impl IntoIterator<Item = (String, f64)>, documents: usize) -> TfidfTable {
        TfidfTable { idf: idf.into_iter().collect(), documents }
    }

    pub fn documents(&self) -> usize {
        self.documents
    }

    pub fn len(&self) -> usize {
        self.idf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idf.is_empty()
    }

    /// Lemmas absent from the reference corpus have `df = 0`.
    pub fn idf(&self, lemma: &str) -> f64 {
        self.idf.get(lemma).copied().unwrap_or_else(|| idf_value(self.documents, 0))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# docs {}\n", self.documents);
        for (l, v) in &self.idf {
            writeln!(out, "{l}\t{v}").expect("write to string");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<TfidfTable, String> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or("empty table")?;
        let documents = header
            .strip_prefix("# docs ")
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| format!("line 1: expected `# docs N`, found `{header}`"))?;
        let mut idf = BTreeMap::new();
        for (i, line) in lines {
            let (lemma, value) = line.split_once('\t').ok_or_else(|| format!("line {}: expected lemma<TAB>idf", i + 1))?;
            let value: f64 = value.trim().parse().map_err(|_| format!("line {}: bad idf `{value}`", i + 1))?;
            if !value.is_finite() || value < 0.0 {
                return Err(format!("line {}: idf must be a non-negative number", i + 1));
            }
            idf.insert(lemma.to_string(), value);
        }
        Ok(TfidfTable { idf, documents })
    }

    pub fn save(&self, path: &Path) -> Result<(), MetricsError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| MetricsError::io(path, e))?;
        }
        std::fs::write(path, self.to_text()).map_err(|e| MetricsError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<TfidfTable, MetricsError> {
        let text = std::fs::read_to_string(path).map_err(|e| MetricsError::io(path, e))?;
        Self::from_text(&text).map_err(|reason| MetricsError::Format { path: path.display().to_string(), reason })
    }
}

fn idf_value(documents: usize, df: usize) -> f64 {
    if documents == 0 {
        return 0.0;
    }
    (documents as f64 / (1 + df) as f64).ln().max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_and_round_trip() {
        let lex = Lexicon::bundled();
        let docs: Vec<Sentence> =
            ["the dog ran", "the dog slept", "a cat slept", "the bird sang"].iter().map(|s| Sentence::parse(s, lex)).collect();
        let t = TfidfTable::build(&docs, lex);
        assert_eq!(t.documents(), 4);
        assert!((t.idf("bird") - (4.0f64 / 2.0).ln()).abs() < 1e-12);
        assert_eq!(t.idf("dog"), (4.0f64 / 3.0).ln());
        assert_eq!(t.idf("zebra"), 4.0f64.ln());
        assert!(!t.to_text().contains("\tthe\t") && !t.idf.contains_key("the"));
        let back = TfidfTable::from_text(&t.to_text()).unwrap();
        assert_eq!(back, t);
        assert!(TfidfTable::from_text("dog\t1.0").is_err());
        assert!(TfidfTable::from_text("# docs 3\ndog\t-1").is_err());
    }
}
