use serde::{Deserialize, Serialize};

use super::lexicon::{Lexicon, Pos};

/// Lowercases, maps whitespace to single spaces, drops other control
/// characters and trims. Idempotent.
pub fn normalize_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for c in raw.chars() {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
            continue;
        }
        if c.is_control() {
            continue;
        }
        if pending_space {
            out.push(' ');
            pending_space = false;
        }
        out.extend(c.to_lowercase());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub lemma: String,
    pub pos: Pos,
    /// Lexicon frequency of the resolved entry; 0 for unknown words.
    pub frequency: u64,
    /// True when no whitespace separated this token from the previous one
    /// in the normalized text (split-off punctuation).
    pub glued: bool,
}

impl Token {
    pub fn is_punctuation(&self) -> bool {
        is_punctuation(&self.surface)
    }
}

/// A token with no alphanumeric characters.
pub fn is_punctuation(surface: &str) -> bool {
    !surface.is_empty() && !surface.chars().any(char::is_alphanumeric)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub raw: String,
    pub tokens: Vec<Token>,
}

impl Sentence {
    /// Normalizes and tokenizes `raw` in one step.
    pub fn parse(raw: &str, lexicon: &Lexicon) -> Sentence {
        let mut sentence = tokenize(&normalize_text(raw), lexicon);
        sentence.raw = raw.to_string();
        sentence
    }

    /// Rebuilds the normalized text from the tokens.
    pub fn text(&self) -> String {
        let mut out = String::new();
        for (i, token) in self.tokens.iter().enumerate() {
            if i > 0 && !token.glued {
                out.push(' ');
            }
            out.push_str(&token.surface);
        }
        out
    }

    /// Tokens that count as words (everything except standalone punctuation).
    pub fn words(&self) -> impl Iterator<Item = &Token> {
        self.tokens.iter().filter(|t| !t.is_punctuation())
    }

    pub fn word_count(&self) -> usize {
        self.words().count()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn has_lemma(&self, lemma: &str) -> bool {
        self.tokens.iter().any(|t| t.lemma == lemma)
    }
}

/// Splits normalized text on spaces, peels leading and trailing punctuation
/// off each chunk into separate tokens, and annotates every token from the
/// lexicon.
pub fn tokenize(normalized: &str, lexicon: &Lexicon) -> Sentence {
    let mut tokens = Vec::new();
    for chunk in normalized.split(' ').filter(|c| !c.is_empty()) {
        let mut glued = false;
        for piece in split_chunk(chunk) {
            let (lemma, pos, frequency) = if is_punctuation(piece) { (piece.to_string(), Pos::Other, 0) } else { lexicon.resolve(piece) };
            tokens.push(Token { surface: piece.to_string(), lemma, pos, frequency, glued });
            glued = true;
        }
    }
    Sentence { raw: normalized.to_string(), tokens }
}

fn split_chunk(chunk: &str) -> Vec<&str> {
    if is_punctuation(chunk) {
        return vec![chunk];
    }
    let chars: Vec<(usize, char)> = chunk.char_indices().collect();
    let first = chars.iter().position(|&(_, c)| c.is_alphanumeric()).unwrap_or(0);
    let last = chars.iter().rposition(|&(_, c)| c.is_alphanumeric()).unwrap_or(0);
    let mut pieces = Vec::new();
    for &(at, c) in &chars[..first] {
        pieces.push(&chunk[at..at + c.len_utf8()]);
    }
    let core_start = chars[first].0;
    let core_end = chars[last].0 + chars[last].1.len_utf8();
    pieces.push(&chunk[core_start..core_end]);
    for &(at, c) in &chars[last + 1..] {
        pieces.push(&chunk[at..at + c.len_utf8()]);
    }
    pieces
}

#[cfg(test)]
mod tests {
    use super::*;

    fn char_class_normalize(raw: &str) -> String {
        // Independent reference: classify each char, then join words.
        let mapped: String = raw
            .chars()
            .filter_map(|c| {
                if c.is_whitespace() {
                    Some(' ')
                } else if c.is_control() {
                    None
                } else {
                    Some(c)
                }
            })
            .flat_map(char::to_lowercase)
            .collect();
        mapped.split(' ').filter(|w| !w.is_empty()).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_text("The  Dog\tchased"), "the dog chased");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("A1 — Test."), "a1 — test.");
        assert_eq!(normalize_text("A1 — Test."), char_class_normalize("A1 — Test."));
        assert_eq!(normalize_text("  x\u{7}y \n"), "xy");
    }

    #[test]
    fn punctuation_is_split_and_reconstructed() {
        let lex = Lexicon::new();
        let s = tokenize("(hello), world... don't —", &lex);
        let surfaces: Vec<&str> = s.tokens.iter().map(|t| t.surface.as_str()).collect();
        assert_eq!(surfaces, ["(", "hello", ")", ",", "world", ".", ".", ".", "don't", "—"]);
        assert_eq!(s.text(), "(hello), world... don't —");
        assert_eq!(s.word_count(), 3);
    }

    #[test]
    fn unknown_words_fall_back() {
        let s = tokenize("zzxq", &Lexicon::new());
        assert_eq!(s.tokens[0].lemma, "zzxq");
        assert_eq!(s.tokens[0].pos, Pos::Other);
    }

    proptest::proptest! {
        #[test]
        fn normalize_is_idempotent(raw in "\\PC{0,40}|[ \t\n\r\u{0}-\u{1f}a-zA-Z.,]{0,40}") {
            let once = normalize_text(&raw);
            proptest::prop_assert_eq!(normalize_text(&once), once.clone());
            proptest::prop_assert_eq!(once, char_class_normalize(&raw));
        }

        #[test]
        fn tokens_rebuild_normalized_text(raw in "[a-zA-Z .,!?'()\t-]{0,60}") {
            let norm = normalize_text(&raw);
            let first = tokenize(&norm, Lexicon::bundled());
            proptest::prop_assert_eq!(first.text(), norm.clone());
            proptest::prop_assert_eq!(tokenize(&norm, Lexicon::bundled()), first);
        }
    }
}
