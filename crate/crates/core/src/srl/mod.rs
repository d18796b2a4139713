//! Semantic role frames, the built-in template parser, and alignment of
//! roles onto input concepts.

mod external;
mod parser;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use crate::controls::{parse_controls, serialize_controls, LabeledConcept, LabeledConceptSet};
use crate::corpus::{ConceptSet, Sentence};
pub use external::{ExternalParses, ExternalRecord, FrameRecord};
pub use parser::TemplateParser;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RoleLabel {
    #[serde(rename = "V")]
    V,
    #[serde(rename = "ARG0")]
    Arg0,
    #[serde(rename = "ARG1")]
    Arg1,
    #[serde(rename = "ARG2")]
    Arg2,
    #[serde(rename = "ARGM")]
    ArgM,
    #[serde(rename = "OTHER")]
    Other,
}

impl RoleLabel {
    /// Highest precedence first.
    pub const ALL: [RoleLabel; 6] = [RoleLabel::V, RoleLabel::Arg0, RoleLabel::Arg1, RoleLabel::Arg2, RoleLabel::ArgM, RoleLabel::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            RoleLabel::V => "V",
            RoleLabel::Arg0 => "ARG0",
            RoleLabel::Arg1 => "ARG1",
            RoleLabel::Arg2 => "ARG2",
            RoleLabel::ArgM => "ARGM",
            RoleLabel::Other => "OTHER",
        }
    }

    /// Lower is stronger.
    pub fn precedence(self) -> usize {
        self as usize
    }

    /// Maps a PropBank-style label onto the collapsed inventory: `ARGM-*`
    /// becomes ARGM, `R-`/`C-` prefixes are dropped, higher numbered
    /// arguments become OTHER.
    pub fn from_propbank(label: &str) -> Option<RoleLabel> {
        let label = label.trim().to_ascii_uppercase();
        let base = label.strip_prefix("R-").or_else(|| label.strip_prefix("C-")).unwrap_or(&label);
        if base == "ARGM" || base.starts_with("ARGM-") {
            return Some(RoleLabel::ArgM);
        }
        match base {
            "V" => Some(RoleLabel::V),
            "ARG0" | "A0" => Some(RoleLabel::Arg0),
            "ARG1" | "A1" => Some(RoleLabel::Arg1),
            "ARG2" | "A2" => Some(RoleLabel::Arg2),
            "ARG3" | "ARG4" | "ARG5" | "ARGA" | "OTHER" | "O" => Some(RoleLabel::Other),
            _ => None,
        }
    }
}

impl fmt::Display for RoleLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoleLabel {
    type Err = SrlError;

    /// Accepts only the six canonical spellings.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RoleLabel::ALL.into_iter().find(|r| r.as_str() == s).ok_or_else(|| SrlError::UnknownRole(s.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SrlError {
    #[error("no verb found in `{0}`")]
    NoVerbFound(String),
    #[error("unknown role label `{0}`")]
    UnknownRole(String),
    #[error("no external parse for sentence {0}")]
    MissingParse(String),
    #[error("invalid parse for sentence {id}: {reason}")]
    InvalidParse { id: String, reason: String },
    #[error(transparent)]
    Jsonl(#[from] crate::jsonl::JsonlError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub verb_index: usize,
    pub assignments: BTreeMap<usize, RoleLabel>,
}

impl Frame {
    pub fn new(verb_index: usize) -> Frame {
        let mut assignments = BTreeMap::new();
        assignments.insert(verb_index, RoleLabel::V);
        Frame { verb_index, assignments }
    }

    pub fn role(&self, token: usize) -> Option<RoleLabel> {
        self.assignments.get(&token).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SrlParse {
    pub frames: Vec<Frame>,
}

impl SrlParse {
    /// Checks that each frame labels its own verb V and only references
    /// tokens below `token_count`.
    pub fn validate(&self, token_count: usize) -> Result<(), String> {
        for frame in &self.frames {
            if frame.role(frame.verb_index) != Some(RoleLabel::V) {
                return Err(format!("verb {} is not labeled V in its frame", frame.verb_index));
            }
            if let Some((&idx, _)) = frame.assignments.iter().find(|(&i, _)| i >= token_count) {
                return Err(format!("token index {idx} out of range ({token_count} tokens)"));
            }
        }
        Ok(())
    }
}

/// Anything that can produce per-verb frames for a sentence.
pub trait RoleParser: Send + Sync {
    fn parse(&self, sentence: &Sentence) -> Result<SrlParse, SrlError>;
}

/// Parses with the built-in template parser.
pub fn parse_roles(sentence: &Sentence) -> Result<SrlParse, SrlError> {
    TemplateParser.parse(sentence)
}

/// Picks one role per concept from every frame role held by a token whose
/// lemma equals the concept. Precedence V > ARG0 > ARG1 > ARG2 > ARGM >
/// OTHER; ties go to the earliest frame. Concepts with no matching labeled
/// token get OTHER.
pub fn align_roles(parse: &SrlParse, concepts: &ConceptSet, sentence: &Sentence) -> LabeledConceptSet {
    let items = concepts
        .iter()
        .map(|concept| {
            let mut best: Option<(usize, usize, RoleLabel)> = None;
            for (pos, token) in sentence.tokens.iter().enumerate() {
                if token.lemma != concept {
                    continue;
                }
                for (f, frame) in parse.frames.iter().enumerate() {
                    if let Some(role) = frame.role(pos) {
                        let key = (role.precedence(), f, role);
                        if best.is_none_or(|b| (key.0, key.1) < (b.0, b.1)) {
                            best = Some(key);
                        }
                    }
                }
            }
            LabeledConcept { concept: concept.to_string(), role: Some(best.map_or(RoleLabel::Other, |b| b.2)) }
        })
        .collect();
    LabeledConceptSet::new(items, None).expect("concept sets hold distinct valid lemmas")
}

/// Parses and aligns in one step.
pub fn label_concepts(parser: &dyn RoleParser, concepts: &ConceptSet, sentence: &Sentence) -> Result<LabeledConceptSet, SrlError> {
    Ok(align_roles(&parser.parse(sentence)?, concepts, sentence))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{extract_concepts, Lexicon};
    use proptest::prelude::*;

    fn lex() -> &'static Lexicon {
        Lexicon::bundled()
    }

    fn roles(text: &str) -> Vec<(String, RoleLabel)> {
        let s = Sentence::parse(text, lex());
        let parse = parse_roles(&s).unwrap();
        let labeled = align_roles(&parse, &extract_concepts(&s, lex()), &s);
        labeled.items().iter().map(|i| (i.concept.clone(), i.role.unwrap())).collect()
    }

    #[test]
    fn svo_alignment() {
        assert_eq!(
            roles("the dog chased the cat"),
            [("cat".into(), RoleLabel::Arg1), ("chase".into(), RoleLabel::V), ("dog".into(), RoleLabel::Arg0)]
        );
    }

    #[test]
    fn missing_concept_is_other() {
        let s = Sentence::parse("the dog chased the cat", lex());
        let parse = parse_roles(&s).unwrap();
        let concepts: ConceptSet = ["dog", "river"].into_iter().collect();
        let labeled = align_roles(&parse, &concepts, &s);
        assert_eq!(labeled.role_of("river"), Some(RoleLabel::Other));
        assert_eq!(labeled.role_of("dog"), Some(RoleLabel::Arg0));
    }

    #[test]
    fn precedence_picks_arg0_over_arg1() {
        let s = Sentence::parse("the dog chased the cat and the cat ate the fish", lex());
        let parse = parse_roles(&s).unwrap();
        assert_eq!(parse.frames.len(), 2);
        let cat_positions: Vec<usize> = s.tokens.iter().enumerate().filter(|(_, t)| t.lemma == "cat").map(|(i, _)| i).collect();
        assert_eq!(parse.frames[0].role(cat_positions[0]), Some(RoleLabel::Arg1));
        assert_eq!(parse.frames[1].role(cat_positions[1]), Some(RoleLabel::Arg0));
        let concepts: ConceptSet = ["cat"].into_iter().collect();
        assert_eq!(align_roles(&parse, &concepts, &s).role_of("cat"), Some(RoleLabel::Arg0));
    }

    #[test]
    fn earliest_frame_breaks_equal_precedence() {
        // hand-built parse: token 0 is ARGM in both frames
        let s = Sentence::parse("park ran sat", lex());
        let mut f1 = Frame::new(1);
        f1.assignments.insert(0, RoleLabel::ArgM);
        let mut f2 = Frame::new(2);
        f2.assignments.insert(0, RoleLabel::ArgM);
        let parse = SrlParse { frames: vec![f1, f2] };
        let concepts: ConceptSet = ["park"].into_iter().collect();
        assert_eq!(align_roles(&parse, &concepts, &s).role_of("park"), Some(RoleLabel::ArgM));
    }

    #[test]
    fn propbank_labels_collapse() {
        assert_eq!(RoleLabel::from_propbank("ARGM-TMP"), Some(RoleLabel::ArgM));
        assert_eq!(RoleLabel::from_propbank("R-ARG0"), Some(RoleLabel::Arg0));
        assert_eq!(RoleLabel::from_propbank("ARG4"), Some(RoleLabel::Other));
        assert_eq!(RoleLabel::from_propbank("nonsense"), None);
        assert!("ARGM-LOC".parse::<RoleLabel>().is_err());
    }

    proptest! {
        #[test]
        fn alignment_covers_every_concept_once(
            extra in proptest::collection::btree_set("[a-z]{3,6}", 0..3),
            order in Just(vec!["dog", "chase", "cat"]).prop_shuffle(),
        ) {
            let s = Sentence::parse("the dog chased the cat in the park", lex());
            let parse = parse_roles(&s).unwrap();
            let mut concepts: ConceptSet = order.iter().copied().collect();
            for e in &extra { concepts.insert(e.clone()); }
            let labeled = align_roles(&parse, &concepts, &s);
            prop_assert_eq!(labeled.concepts(), concepts.clone());
            prop_assert_eq!(labeled.len(), concepts.len());
            let reordered: ConceptSet = order.iter().rev().copied().chain(extra.iter().map(String::as_str)).collect();
            prop_assert_eq!(align_roles(&parse, &reordered, &s), labeled);
        }
    }
}
