//! Small synthetic corpora with known structure, used for smoke runs and
//! directional checks of the controls.

use crate::cefr::CefrLevel;
use crate::corpus::{Lexicon, Sentence};
use crate::rng::StreamRng;

/// A two-shape grammar: `the N V the N .` and `the N V P the N .`.
#[derive(Debug, Clone, Copy)]
pub struct ToyGrammar {
    pub nouns: &'static [&'static str],
    pub transitive: &'static [&'static str],
    pub intransitive: &'static [&'static str],
    pub prepositions: &'static [&'static str],
}

pub const ANIMALS: ToyGrammar = ToyGrammar {
    nouns: &["dog", "cat", "bird", "boy", "girl", "man", "woman", "horse", "fox", "mouse"],
    transitive: &["chased", "saw", "followed", "watched", "found", "helped", "pushed"],
    intransitive: &["ran", "slept", "sat", "walked", "played", "jumped", "waited"],
    prepositions: &["near", "behind", "beside", "under"],
};

/// Shares no content word with [`ANIMALS`].
pub const PEOPLE: ToyGrammar = ToyGrammar {
    nouns: &["doctor", "student", "king", "queen", "soldier", "friend", "neighbor"],
    transitive: &["met", "called", "visited", "asked", "paid", "told"],
    intransitive: &["smiled", "laughed", "arrived", "spoke", "stood"],
    prepositions: &["near", "behind", "beside"],
};

impl ToyGrammar {
    /// Every sentence the grammar generates, in a fixed order. Subject and
    /// object always differ.
    pub fn sentences(&self) -> Vec<String> {
        let mut out = Vec::new();
        for &a in self.nouns {
            for &b in self.nouns.iter().filter(|&&b| b != a) {
                for &v in self.transitive {
                    out.push(format!("the {a} {v} the {b} ."));
                }
                for &v in self.intransitive {
                    for &p in self.prepositions {
                        out.push(format!("the {a} {v} {p} the {b} ."));
                    }
                }
            }
        }
        out
    }

    /// `n` distinct sentences drawn uniformly without replacement.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<String> {
        let all = self.sentences();
        let mut rng = StreamRng::new(seed);
        rng.sample_indices(all.len(), n.min(all.len())).into_iter().map(|i| all[i].clone()).collect()
    }
}

const C2_OPENERS: [&str; 4] =
    ["yesterday , quite suddenly ,", "then , very quietly ,", "today , quite slowly ,", "finally , very happily ,"];
const C2_CLOSERS: [&str; 4] =
    ["over there again and again", "there very quickly and then again", "again and again over here", "quite quickly and then again there"];

/// Pads a grammar sentence with concept-free filler to at least twelve
/// words; the concept set is unchanged.
pub fn lengthen(sentence: &str, rng: &mut StreamRng) -> String {
    let body = sentence.trim_end_matches(" .").trim_end_matches('.');
    let opener = C2_OPENERS[rng.below(C2_OPENERS.len())];
    let closer = C2_CLOSERS[rng.below(C2_CLOSERS.len())];
    format!("{opener} {body} {closer} .")
}

/// Each grammar sentence appears once, as-is and labeled A1 or lengthened
/// and labeled C2, with even odds.
pub fn cefr_corpus(sentences: &[String], seed: u64) -> Vec<(String, CefrLevel)> {
    let mut rng = StreamRng::derived(seed, 0xce, 0);
    sentences.iter().map(|s| if rng.below(2) == 0 { (s.clone(), CefrLevel::A1) } else { (lengthen(s, &mut rng), CefrLevel::C2) }).collect()
}

pub fn parse_all(texts: &[String], lexicon: &Lexicon) -> Vec<Sentence> {
    texts.iter().map(|t| Sentence::parse(t, lexicon)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::extract_concepts;
    use crate::srl::{parse_roles, RoleLabel};

    #[test]
    fn grammars_are_lexical_and_disjoint() {
        let lex = Lexicon::bundled();
        let concepts = |g: &ToyGrammar| {
            let mut all = std::collections::BTreeSet::new();
            for s in parse_all(&g.sentences(), lex) {
                all.extend(extract_concepts(&s, lex).iter().map(String::from));
            }
            all
        };
        let (a, p) = (concepts(&ANIMALS), concepts(&PEOPLE));
        assert_eq!(a.len(), ANIMALS.nouns.len() + ANIMALS.transitive.len() + ANIMALS.intransitive.len());
        assert_eq!(p.len(), PEOPLE.nouns.len() + PEOPLE.transitive.len() + PEOPLE.intransitive.len());
        assert!(a.is_disjoint(&p));
        for s in ANIMALS.sentences().iter().chain(&PEOPLE.sentences()) {
            for w in s.split(' ') {
                assert!(w == "." || lex.lookup(w).is_some(), "{w} missing from lexicon");
            }
        }
    }

    #[test]
    fn template_parser_recovers_grammar_roles() {
        let lex = Lexicon::bundled();
        for text in ANIMALS.sample(200, 3).iter().chain(&PEOPLE.sample(100, 3)) {
            let s = Sentence::parse(text, lex);
            let parse = parse_roles(&s).unwrap();
            assert_eq!(parse.frames.len(), 1, "{text}");
            let f = &parse.frames[0];
            assert_eq!(f.role(1), Some(RoleLabel::Arg0), "{text}");
            assert_eq!(f.verb_index, 2, "{text}");
            let last_noun = s.tokens.len() - 2;
            let expected = if s.tokens.len() == 6 { RoleLabel::Arg1 } else { RoleLabel::ArgM };
            assert_eq!(f.role(last_noun), Some(expected), "{text}");
        }
    }

    #[test]
    fn cefr_variants_keep_concepts() {
        let lex = Lexicon::bundled();
        let base = ANIMALS.sample(50, 1);
        for (text, level) in cefr_corpus(&base, 2) {
            let s = Sentence::parse(&text, lex);
            match level {
                CefrLevel::A1 => assert!(s.word_count() <= 6),
                _ => assert!(s.word_count() >= 12, "{text}"),
            }
            assert_eq!(extract_concepts(&s, lex).len(), 3, "{text}");
        }
    }
}
