use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::CorpusError;

const BUNDLED_LEXICON: &str = include_str!("../../data/lexicon.tsv");
const BUNDLED_STOPWORDS: &str = include_str!("../../data/stopwords.txt");

/// Coarse part-of-speech classes; only the first three can yield concepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Pos {
    Noun,
    Verb,
    Adj,
    Other,
}

impl Pos {
    pub fn is_content(self) -> bool {
        matches!(self, Pos::Noun | Pos::Verb | Pos::Adj)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Pos::Noun => "NOUN",
            Pos::Verb => "VERB",
            Pos::Adj => "ADJ",
            Pos::Other => "OTHER",
        }
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pos {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "NOUN" => Ok(Pos::Noun),
            "VERB" => Ok(Pos::Verb),
            "ADJ" => Ok(Pos::Adj),
            "OTHER" => Ok(Pos::Other),
            other => Err(CorpusError::Lexicon(format!("unknown part of speech `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexEntry {
    pub lemma: String,
    pub pos: Pos,
    pub frequency: u64,
}

/// Surface-form lookup table with lemma, part of speech and corpus frequency,
/// plus a stopword list.
///
/// The bundled table is loaded from `data/lexicon.tsv`; externally produced
/// tables in the same four-column format can be loaded with [`Lexicon::load`].
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: HashMap<String, LexEntry>,
    lemmas: HashMap<String, (Pos, u64)>,
    stopwords: HashSet<String>,
    sorted_frequencies: Vec<u64>,
}

fn valid_lemma(lemma: &str) -> bool {
    !lemma.is_empty() && !lemma.chars().any(char::is_whitespace) && lemma.chars().all(|c| !c.is_uppercase())
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// The lexicon shipped with the crate.
    pub fn bundled() -> &'static Lexicon {
        static BUNDLED: OnceLock<Lexicon> = OnceLock::new();
        BUNDLED.get_or_init(|| Lexicon::from_tsv(BUNDLED_LEXICON, BUNDLED_STOPWORDS).expect("bundled lexicon is well formed"))
    }

    /// Parses `surface<TAB>lemma<TAB>POS<TAB>frequency` lines (`#` starts a
    /// comment) and a newline-separated stopword list.
    pub fn from_tsv(entries: &str, stopwords: &str) -> Result<Self, CorpusError> {
        let mut lexicon = Lexicon::new();
        for (lineno, line) in entries.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(CorpusError::Lexicon(format!("line {}: expected 4 tab-separated fields, found {}", lineno + 1, fields.len())));
            }
            let pos: Pos = fields[2].parse().map_err(|e| CorpusError::Lexicon(format!("line {}: {e}", lineno + 1)))?;
            let frequency: u64 = fields[3]
                .trim()
                .parse()
                .map_err(|_| CorpusError::Lexicon(format!("line {}: bad frequency `{}`", lineno + 1, fields[3])))?;
            lexicon.insert(fields[0], fields[1], pos, frequency).map_err(|e| CorpusError::Lexicon(format!("line {}: {e}", lineno + 1)))?;
        }
        for word in stopwords.lines().map(str::trim).filter(|w| !w.is_empty() && !w.starts_with('#')) {
            lexicon.add_stopword(word);
        }
        Ok(lexicon)
    }

    pub fn load(entries: &Path, stopwords: Option<&Path>) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(entries).map_err(|e| CorpusError::io(entries, e))?;
        let stop = match stopwords {
            Some(path) => std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?,
            None => String::new(),
        };
        Self::from_tsv(&text, &stop)
    }

    pub fn insert(&mut self, surface: &str, lemma: &str, pos: Pos, frequency: u64) -> Result<(), CorpusError> {
        if !valid_lemma(lemma) {
            return Err(CorpusError::Lexicon(format!("lemma `{lemma}` must be lowercase, nonempty and contain no whitespace")));
        }
        if surface.is_empty() || surface.chars().any(char::is_whitespace) {
            return Err(CorpusError::Lexicon(format!("bad surface form `{surface}`")));
        }
        let surface = surface.to_lowercase();
        let entry = LexEntry { lemma: lemma.to_string(), pos, frequency };
        if let Some(old) = self.entries.insert(surface, entry) {
            let at = self.sorted_frequencies.binary_search(&old.frequency).unwrap_or_else(|i| i);
            self.sorted_frequencies.remove(at);
        }
        let at = self.sorted_frequencies.partition_point(|&f| f <= frequency);
        self.sorted_frequencies.insert(at, frequency);
        self.lemmas.entry(lemma.to_string()).or_insert((pos, frequency));
        Ok(())
    }

    pub fn add_stopword(&mut self, word: &str) {
        self.stopwords.insert(word.to_lowercase());
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, surface: &str) -> Option<&LexEntry> {
        self.entries.get(surface)
    }

    pub fn is_stopword(&self, word: &str) -> bool {
        self.stopwords.contains(word)
    }

    pub fn stopwords(&self) -> impl Iterator<Item = &str> {
        self.stopwords.iter().map(String::as_str)
    }

    pub fn contains_lemma(&self, lemma: &str) -> bool {
        self.lemmas.contains_key(lemma)
    }

    /// Resolves a surface form to `(lemma, pos, frequency)`.
    ///
    /// Direct lookup first; otherwise inflectional suffixes are stripped and
    /// the first candidate known to the lexicon (as a surface or a lemma) is
    /// used. Unknown words fall back to `(surface, OTHER, 0)`.
    pub fn resolve(&self, surface: &str) -> (String, Pos, u64) {
        if let Some(entry) = self.entries.get(surface) {
            return (entry.lemma.clone(), entry.pos, entry.frequency);
        }
        for candidate in suffix_candidates(surface) {
            if let Some(entry) = self.entries.get(&candidate) {
                return (entry.lemma.clone(), entry.pos, entry.frequency);
            }
            if let Some(&(pos, frequency)) = self.lemmas.get(&candidate) {
                return (candidate, pos, frequency);
            }
        }
        (surface.to_string(), Pos::Other, 0)
    }

    /// Fraction of lexicon entries whose frequency is at most `frequency`.
    pub fn frequency_percentile(&self, frequency: u64) -> f64 {
        if self.sorted_frequencies.is_empty() {
            return 0.0;
        }
        let at_most = self.sorted_frequencies.partition_point(|&f| f <= frequency);
        at_most as f64 / self.sorted_frequencies.len() as f64
    }
}

fn is_vowel(c: u8) -> bool {
    matches!(c, b'a' | b'e' | b'i' | b'o' | b'u')
}

/// Candidate base forms for an out-of-lexicon word, most specific rule first.
pub(crate) fn suffix_candidates(word: &str) -> Vec<String> {
    let mut out = Vec::new();
    let b = word.as_bytes();
    let n = b.len();
    let mut push = |s: String| {
        if !s.is_empty() && !out.contains(&s) {
            out.push(s);
        }
    };
    if let Some(stem) = word.strip_suffix("'s") {
        push(stem.to_string());
    }
    if !word.is_ascii() {
        return out;
    }
    let undouble = |stem: &str| -> Option<String> {
        let s = stem.as_bytes();
        let m = s.len();
        (m >= 3 && s[m - 1] == s[m - 2] && !is_vowel(s[m - 1])).then(|| stem[..m - 1].to_string())
    };
    if n > 4 && word.ends_with("ies") {
        push(format!("{}y", &word[..n - 3]));
    }
    if n > 3 && word.ends_with("es") {
        push(word[..n - 2].to_string());
    }
    if n > 2 && word.ends_with('s') && !word.ends_with("ss") {
        push(word[..n - 1].to_string());
    }
    if n > 4 && word.ends_with("ied") {
        push(format!("{}y", &word[..n - 3]));
    }
    if n > 3 && word.ends_with("ed") {
        let stem = &word[..n - 2];
        if let Some(single) = undouble(stem) {
            push(single);
        }
        push(stem.to_string());
        push(word[..n - 1].to_string());
    }
    if n > 4 && word.ends_with("ing") {
        let stem = &word[..n - 3];
        if let Some(single) = undouble(stem) {
            push(single);
        }
        push(stem.to_string());
        push(format!("{stem}e"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Lexicon {
        let mut lex = Lexicon::new();
        lex.insert("chase", "chase", Pos::Verb, 15).unwrap();
        lex.insert("stop", "stop", Pos::Verb, 120).unwrap();
        lex.insert("run", "run", Pos::Verb, 200).unwrap();
        lex.insert("city", "city", Pos::Noun, 400).unwrap();
        lex.insert("dog", "dog", Pos::Noun, 300).unwrap();
        lex
    }

    #[test]
    fn suffix_fallback_restores_base_forms() {
        let lex = small();
        assert_eq!(lex.resolve("chased").0, "chase");
        assert_eq!(lex.resolve("chasing").0, "chase");
        assert_eq!(lex.resolve("stopped").0, "stop");
        assert_eq!(lex.resolve("running").0, "run");
        assert_eq!(lex.resolve("cities").0, "city");
        assert_eq!(lex.resolve("dogs").1, Pos::Noun);
        assert_eq!(lex.resolve("dog's").0, "dog");
        assert_eq!(lex.resolve("zzxqs"), ("zzxqs".to_string(), Pos::Other, 0));
    }

    #[test]
    fn rejects_bad_lemmas() {
        let mut lex = Lexicon::new();
        assert!(lex.insert("Dogs", "Dog", Pos::Noun, 1).is_err());
        assert!(lex.insert("ice cream", "ice cream", Pos::Noun, 1).is_err());
        assert!(lex.insert("x", "", Pos::Noun, 1).is_err());
    }

    #[test]
    fn percentile_is_monotone() {
        let lex = small();
        assert_eq!(lex.frequency_percentile(0), 0.0);
        assert_eq!(lex.frequency_percentile(400), 1.0);
        assert!(lex.frequency_percentile(15) < lex.frequency_percentile(300));
    }

    #[test]
    fn reinserting_a_surface_keeps_frequency_index_consistent() {
        let mut lex = small();
        lex.insert("dog", "dog", Pos::Noun, 1).unwrap();
        assert_eq!(lex.len(), 5);
        assert_eq!(lex.frequency_percentile(1), 0.2);
    }

    #[test]
    fn bundled_lexicon_loads() {
        let lex = Lexicon::bundled();
        assert!(lex.len() > 1000);
        assert_eq!(lex.lookup("chased").unwrap().lemma, "chase");
        assert!(lex.is_stopword("the"));
        assert!(!lex.is_stopword("dog"));
    }
}
