use std::collections::HashMap;

use proptest::prelude::*;

use ctrlgen::corpus::{build_pairs, extract_concepts, normalize_text, tokenize, Lexicon, PairOptions, Pos};

const ENTRIES: &[(&str, &str, &str, u64)] = &[
    ("the", "the", "OTHER", 9000),
    ("a", "a", "OTHER", 8000),
    ("and", "and", "OTHER", 7000),
    ("of", "of", "OTHER", 6900),
    ("in", "in", "OTHER", 5000),
    ("on", "on", "OTHER", 4000),
    ("is", "be", "VERB", 8500),
    ("was", "be", "VERB", 6000),
    ("dog", "dog", "NOUN", 300),
    ("dogs", "dog", "NOUN", 120),
    ("cat", "cat", "NOUN", 280),
    ("cats", "cat", "NOUN", 90),
    ("bird", "bird", "NOUN", 150),
    ("park", "park", "NOUN", 200),
    ("sun", "sun", "NOUN", 260),
    ("house", "house", "NOUN", 700),
    ("tree", "tree", "NOUN", 240),
    ("ball", "ball", "NOUN", 110),
    ("child", "child", "NOUN", 500),
    ("children", "child", "NOUN", 320),
    ("man", "man", "NOUN", 900),
    ("men", "man", "NOUN", 400),
    ("woman", "woman", "NOUN", 600),
    ("river", "river", "NOUN", 180),
    ("road", "road", "NOUN", 350),
    ("chase", "chase", "VERB", 40),
    ("chased", "chase", "VERB", 30),
    ("chases", "chase", "VERB", 10),
    ("see", "see", "VERB", 2000),
    ("saw", "see", "VERB", 1500),
    ("seen", "see", "VERB", 700),
    ("run", "run", "VERB", 800),
    ("ran", "run", "VERB", 400),
    ("sleep", "sleep", "VERB", 220),
    ("slept", "sleep", "VERB", 80),
    ("throw", "throw", "VERB", 160),
    ("threw", "throw", "VERB", 70),
    ("walk", "walk", "VERB", 420),
    ("walked", "walk", "VERB", 210),
    ("find", "find", "VERB", 1100),
    ("found", "find", "VERB", 900),
    ("big", "big", "ADJ", 1300),
    ("small", "small", "ADJ", 1000),
    ("red", "red", "ADJ", 450),
    ("happy", "happy", "ADJ", 380),
    ("old", "old", "ADJ", 1200),
    ("quickly", "quickly", "OTHER", 300),
    ("very", "very", "OTHER", 3000),
    ("yesterday", "yesterday", "OTHER", 250),
    ("under", "under", "OTHER", 900),
];

const STOPWORDS: &str = "the\na\nand\nof\nin\non\nbe\n";

fn lexicon() -> Lexicon {
    let tsv: String = ENTRIES.iter().map(|(s, l, p, f)| format!("{s}\t{l}\t{p}\t{f}\n")).collect();
    Lexicon::from_tsv(&tsv, STOPWORDS).unwrap()
}

fn oracle() -> HashMap<&'static str, (&'static str, Pos)> {
    ENTRIES.iter().map(|&(s, l, p, _)| (s, (l, p.parse().unwrap()))).collect()
}

#[test]
fn hand_built_lexicon_has_fifty_entries() {
    assert_eq!(ENTRIES.len(), 50);
    assert_eq!(lexicon().len(), 50);
}

#[test]
fn tokenize_examples() {
    let lex = lexicon();
    let s = tokenize("the dog chased the cat.", &lex);
    let surfaces: Vec<&str> = s.tokens.iter().map(|t| t.surface.as_str()).collect();
    assert_eq!(surfaces, ["the", "dog", "chased", "the", "cat", "."]);
    assert_eq!(s.tokens[2].lemma, "chase");
    assert_eq!(s.tokens[2].pos, Pos::Verb);
    assert!(s.tokens[5].glued);

    let cat = tokenize("cat", &lex);
    assert_eq!(cat.tokens.len(), 1);
    assert_eq!((cat.tokens[0].lemma.as_str(), cat.tokens[0].pos), ("cat", Pos::Noun));

    let unknown = tokenize("zzxq", &lex);
    assert_eq!((unknown.tokens[0].lemma.as_str(), unknown.tokens[0].pos), ("zzxq", Pos::Other));
    assert!(tokenize("", &lex).tokens.is_empty());
}

#[test]
fn concepts_use_the_supplied_lexicon() {
    let lex = lexicon();
    let got: Vec<String> =
        extract_concepts(&tokenize("the children saw a big red ball in the park", &lex), &lex).iter().map(String::from).collect();
    assert_eq!(got, ["ball", "big", "child", "park", "red", "see"]);
    let many = tokenize("the old man saw a small dog chase a red ball", &lex);
    assert_eq!(extract_concepts(&many, &lex).len(), 8);
    assert!(build_pairs(&[many], &lex, &PairOptions::default()).is_empty());
}

fn word() -> impl Strategy<Value = String> {
    let known: Vec<String> = ENTRIES.iter().map(|e| e.0.to_string()).collect();
    prop_oneof![
        4 => proptest::sample::select(known),
        1 => Just("zzxq".to_string()),
        1 => Just("qwv".to_string()),
    ]
}

fn chunk() -> impl Strategy<Value = (String, String, String)> {
    (proptest::sample::select(vec!["", "", "", "(", "\""]), word(), proptest::sample::select(vec!["", "", "", ".", ",", "!", "?\"", ")."]))
        .prop_map(|(a, b, c)| (a.to_string(), b, c.to_string()))
}

proptest! {
    #[test]
    fn tokenize_matches_lookup_oracle(chunks in proptest::collection::vec(chunk(), 1..15)) {
        let lex = lexicon();
        let table = oracle();
        let text: Vec<String> = chunks.iter().map(|(a, b, c)| format!("{a}{b}{c}")).collect();
        let normalized = normalize_text(&text.join(" "));
        let mut expected: Vec<(String, String, Pos)> = Vec::new();
        for (lead, w, trail) in &chunks {
            for p in lead.chars() {
                expected.push((p.to_string(), p.to_string(), Pos::Other));
            }
            let (lemma, pos) = table.get(w.as_str()).copied().unwrap_or((w.as_str(), Pos::Other));
            expected.push((w.clone(), lemma.to_string(), pos));
            for p in trail.chars() {
                expected.push((p.to_string(), p.to_string(), Pos::Other));
            }
        }
        let got: Vec<(String, String, Pos)> = tokenize(&normalized, &lex).tokens.into_iter().map(|t| (t.surface, t.lemma, t.pos)).collect();
        prop_assert_eq!(got, expected);
    }
}
