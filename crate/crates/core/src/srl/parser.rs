use crate::corpus::{Pos, Sentence, Token};

use super::{Frame, RoleLabel, RoleParser, SrlError, SrlParse};

/// Rule-based parser for simple declarative clauses.
///
/// Clauses are cut at punctuation, conjunctions, subordinators and relative
/// pronouns. Inside a clause each non-auxiliary verb gets a frame: the
/// pre-verbal noun chunk is ARG0, a single post-verbal bare noun chunk is
/// ARG1 (two bare chunks read as ARG2 then ARG1), and prepositional chunks
/// and adverbs are ARGM. A clause with no subject borrows one: relative
/// clauses from the antecedent noun chunk, coordinated clauses and
/// infinitives from the preceding frame.
///
/// It is only expected to be exact on the bundled template grammar.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateParser;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Verb,
    Aux,
    Prep,
    Det,
    Pron,
    Adv,
    Intens,
    Coord,
    Sub,
    Rel,
    Boundary,
    Nominal,
}

const AUX: &[&str] = &[
    "am", "is", "are", "was", "were", "be", "been", "being", "has", "have", "had", "having", "do", "does", "did", "will", "would", "can",
    "could", "should", "shall", "may", "might", "must", "'s", "'re", "'ve", "'ll", "'d",
];
const PREP: &[&str] = &[
    "in", "on", "at", "with", "from", "by", "for", "of", "about", "into", "onto", "over", "under", "near", "behind", "across", "through",
    "along", "around", "between", "among", "beside", "inside", "outside", "toward", "towards", "during", "after", "before", "until",
    "without", "against", "past", "beneath", "above", "below", "beyond", "within", "upon", "as", "like", "than", "despite",
];
const DET: &[&str] = &[
    "the", "a", "an", "this", "these", "those", "my", "your", "his", "its", "our", "their", "some", "any", "every", "each", "no", "many",
    "few", "several", "all", "both", "much", "more", "most", "other", "another", "two", "three", "four", "five", "six", "seven", "eight",
    "nine", "ten",
];
const PRON: &[&str] = &[
    "i",
    "you",
    "he",
    "she",
    "it",
    "we",
    "they",
    "me",
    "him",
    "us",
    "them",
    "myself",
    "yourself",
    "himself",
    "herself",
    "itself",
    "ourselves",
    "themselves",
    "everyone",
    "everybody",
    "someone",
    "somebody",
    "something",
    "nothing",
    "anyone",
    "anything",
    "everything",
    "one",
];
const ADV: &[&str] = &[
    "yesterday",
    "today",
    "tomorrow",
    "tonight",
    "now",
    "here",
    "there",
    "always",
    "never",
    "often",
    "sometimes",
    "usually",
    "again",
    "soon",
    "already",
    "still",
    "also",
    "just",
    "even",
    "together",
    "away",
    "not",
    "n't",
    "later",
    "once",
    "ever",
    "back",
    "out",
    "up",
    "down",
    "off",
    "everywhere",
    "abroad",
];
const INTENS: &[&str] = &["very", "quite", "too", "really", "rather", "extremely", "so"];
const COORD: &[&str] = &["and", "or", "but", "then", "nor", "yet"];
const SUB: &[&str] =
    &["because", "although", "though", "while", "when", "if", "since", "unless", "whereas", "whether", "whenever", "where"];
const REL: &[&str] = &["who", "which", "whom", "whose"];

fn base_class(token: &Token) -> Class {
    let s = token.surface.as_str();
    if token.is_punctuation() {
        Class::Boundary
    } else if AUX.contains(&s) {
        Class::Aux
    } else if COORD.contains(&s) {
        Class::Coord
    } else if SUB.contains(&s) {
        Class::Sub
    } else if REL.contains(&s) {
        Class::Rel
    } else if PREP.contains(&s) || s == "to" {
        Class::Prep
    } else if DET.contains(&s) || s == "that" || s == "her" {
        Class::Det
    } else if PRON.contains(&s) {
        Class::Pron
    } else if INTENS.contains(&s) {
        Class::Intens
    } else if ADV.contains(&s) || (token.pos == Pos::Other && s.len() > 4 && s.ends_with("ly")) {
        Class::Adv
    } else if token.pos == Pos::Verb {
        Class::Verb
    } else {
        Class::Nominal
    }
}

fn classify(tokens: &[Token]) -> Vec<Class> {
    let base: Vec<Class> = tokens.iter().map(base_class).collect();
    let mut classes = base.clone();
    for (i, token) in tokens.iter().enumerate() {
        let prev = i.checked_sub(1).map(|p| base[p]);
        let next = base.get(i + 1).copied();
        let next_verbal = matches!(next, Some(Class::Verb | Class::Aux))
            || (next == Some(Class::Adv) && matches!(base.get(i + 2), Some(Class::Verb | Class::Aux)));
        match token.surface.as_str() {
            "to" if matches!(next, Some(Class::Verb | Class::Aux)) => classes[i] = Class::Aux,
            "that" => {
                classes[i] = if matches!(prev, Some(Class::Nominal | Class::Pron)) && next_verbal {
                    Class::Rel
                } else if prev == Some(Class::Verb) || next == Some(Class::Pron) {
                    Class::Sub
                } else if matches!(next, Some(Class::Nominal | Class::Intens | Class::Det)) {
                    Class::Det
                } else {
                    Class::Pron
                }
            }
            "her" if !matches!(next, Some(Class::Nominal | Class::Intens)) => classes[i] = Class::Pron,
            _ => {}
        }
    }
    classes
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Span {
    start: usize,
    end: usize,
}

impl Span {
    fn indices(self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

#[derive(Debug, Clone, Copy)]
enum Chunk {
    /// Bare noun chunk.
    Np(Span),
    /// Preposition followed by an optional noun chunk.
    Pp(Span),
    Adv(usize),
    Verb(usize),
    Aux(usize),
}

/// Groups determiners, nominals and pronouns into noun chunks. A pronoun is
/// always its own chunk, and a determiner starts a new chunk once the
/// current one has a head.
fn noun_chunks(classes: &[Class], range: std::ops::Range<usize>) -> Vec<Chunk> {
    let mut chunks = Vec::new();
    let mut i = range.start;
    let end = range.end;
    let np_at = |mut j: usize| -> Option<Span> {
        let start = j;
        let mut has_head = false;
        while j < end {
            match classes[j] {
                Class::Pron if !has_head && j == start => {
                    return Some(Span { start, end: j + 1 });
                }
                Class::Det if !has_head => j += 1,
                Class::Intens if matches!(classes.get(j + 1), Some(Class::Nominal)) && j + 1 < end => j += 1,
                Class::Nominal => {
                    has_head = true;
                    j += 1;
                }
                _ => break,
            }
        }
        has_head.then_some(Span { start, end: j })
    };
    while i < end {
        match classes[i] {
            Class::Prep => {
                let object = np_at(i + 1);
                let stop = object.map_or(i + 1, |s| s.end);
                chunks.push(Chunk::Pp(Span { start: i, end: stop }));
                i = stop;
            }
            Class::Det | Class::Nominal | Class::Pron | Class::Intens => match np_at(i) {
                Some(span) => {
                    chunks.push(Chunk::Np(span));
                    i = span.end;
                }
                None => i += 1,
            },
            Class::Adv => {
                chunks.push(Chunk::Adv(i));
                i += 1;
            }
            Class::Verb => {
                chunks.push(Chunk::Verb(i));
                i += 1;
            }
            Class::Aux => {
                chunks.push(Chunk::Aux(i));
                i += 1;
            }
            _ => i += 1,
        }
    }
    chunks
}

#[derive(Debug, Clone)]
struct Clause {
    range: std::ops::Range<usize>,
    opener: Option<Class>,
    /// Noun chunk a relative clause attaches to.
    antecedent: Option<Span>,
}

fn clauses(classes: &[Class]) -> Vec<Clause> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut opener = None;
    let mut antecedent = None;
    let mut last_np: Option<Span> = None;
    for i in 0..=classes.len() {
        let cut = i == classes.len() || matches!(classes[i], Class::Boundary | Class::Coord | Class::Sub | Class::Rel);
        if !cut {
            continue;
        }
        if i > start {
            for chunk in noun_chunks(classes, start..i) {
                if let Chunk::Np(span) = chunk {
                    last_np = Some(span);
                }
            }
        }
        out.push(Clause { range: start..i, opener, antecedent });
        if i < classes.len() {
            match classes[i] {
                // punctuation does not reset an open clause context
                Class::Boundary => {
                    if !matches!(classes.get(i + 1), Some(Class::Rel)) {
                        opener = Some(Class::Boundary);
                        antecedent = None;
                    }
                }
                class => {
                    opener = Some(class);
                    antecedent = if class == Class::Rel { last_np } else { None };
                }
            }
        }
        start = i + 1;
    }
    out
}

impl RoleParser for TemplateParser {
    fn parse(&self, sentence: &Sentence) -> Result<SrlParse, SrlError> {
        let tokens = &sentence.tokens;
        if !tokens.iter().any(|t| t.pos == Pos::Verb) {
            return Err(SrlError::NoVerbFound(sentence.text()));
        }
        let classes = classify(tokens);
        let mut frames = Vec::new();
        let mut previous_subject: Option<Span> = None;
        for clause in clauses(&classes) {
            if clause.range.is_empty() {
                continue;
            }
            let chunks = noun_chunks(&classes, clause.range.clone());
            let mut verbs: Vec<usize> =
                chunks.iter().enumerate().filter_map(|(c, chunk)| matches!(chunk, Chunk::Verb(_)).then_some(c)).collect();
            if verbs.is_empty() {
                // a clause whose only verb is a lexical auxiliary ("she has a car")
                if let Some(c) = chunks.iter().rposition(|chunk| matches!(chunk, Chunk::Aux(i) if tokens[*i].pos == Pos::Verb)) {
                    verbs.push(c);
                }
            }
            let inherit = match clause.opener {
                Some(Class::Rel) => clause.antecedent,
                Some(Class::Coord) => previous_subject,
                _ => None,
            };
            let mut clause_subject: Option<Span> = None;
            for (k, &c) in verbs.iter().enumerate() {
                let verb = match chunks[c] {
                    Chunk::Verb(i) | Chunk::Aux(i) => i,
                    _ => unreachable!(),
                };
                let mut frame = Frame::new(verb);
                let before = if k == 0 { &chunks[..c] } else { &chunks[verbs[k - 1] + 1..c] };
                let after_end = verbs.get(k + 1).copied().unwrap_or(chunks.len());
                let after = &chunks[c + 1..after_end];

                let bare = before.iter().filter_map(|ch| match ch {
                    Chunk::Np(s) => Some(*s),
                    _ => None,
                });
                let subject =
                    if k == 0 { bare.clone().next() } else { bare.clone().next_back() }.or(if k == 0 { inherit } else { clause_subject });
                if let Some(span) = subject {
                    label(&mut frame, span, RoleLabel::Arg0);
                }
                if k == 0 {
                    for ch in before {
                        label_modifier(&mut frame, ch);
                    }
                    clause_subject = subject;
                }

                let objects: Vec<Span> = after
                    .iter()
                    .filter_map(|ch| match ch {
                        Chunk::Np(s) => Some(*s),
                        _ => None,
                    })
                    .collect();
                match objects.as_slice() {
                    [] => {}
                    [one] => label(&mut frame, *one, RoleLabel::Arg1),
                    [first, second, ..] => {
                        label(&mut frame, *first, RoleLabel::Arg2);
                        label(&mut frame, *second, RoleLabel::Arg1);
                    }
                }
                for ch in after {
                    label_modifier(&mut frame, ch);
                }
                frames.push(frame);
            }
            if clause_subject.is_some() {
                previous_subject = clause_subject;
            }
        }
        Ok(SrlParse { frames })
    }
}

fn label(frame: &mut Frame, span: Span, role: RoleLabel) {
    for i in span.indices() {
        if i != frame.verb_index {
            frame.assignments.entry(i).or_insert(role);
        }
    }
}

fn label_modifier(frame: &mut Frame, chunk: &Chunk) {
    match *chunk {
        Chunk::Pp(span) => label(frame, span, RoleLabel::ArgM),
        Chunk::Adv(i) => label(frame, Span { start: i, end: i + 1 }, RoleLabel::ArgM),
        _ => {}
    }
}
