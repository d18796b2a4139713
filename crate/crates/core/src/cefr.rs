//! Proxy CEFR proficiency scoring and the `<CEFR:X>` control code.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::controls::LabeledConceptSet;
use crate::corpus::{ConceptSentencePair, ConceptSet, CorpusError, Lexicon, Sentence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CefrLevel {
    A1,
    A2,
    B1,
    B2,
    C1,
    C2,
}

impl CefrLevel {
    pub const ALL: [CefrLevel; 6] = [CefrLevel::A1, CefrLevel::A2, CefrLevel::B1, CefrLevel::B2, CefrLevel::C1, CefrLevel::C2];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<CefrLevel> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        ["A1", "A2", "B1", "B2", "C1", "C2"][self.index()]
    }

    pub fn control_token(self) -> String {
        format!("<CEFR:{}>", self.as_str())
    }

    pub fn from_control_token(token: &str) -> Option<CefrLevel> {
        token.strip_prefix("<CEFR:")?.strip_suffix('>')?.parse().ok()
    }
}

impl fmt::Display for CefrLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CefrLevel {
    type Err = CefrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.iter().copied().find(|l| l.as_str().eq_ignore_ascii_case(s.trim())).ok_or_else(|| CefrError::UnknownLevel(s.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CefrError {
    #[error("sentence has no content tokens: `{0}`")]
    EmptySentence(String),
    #[error("unknown CEFR level `{0}`")]
    UnknownLevel(String),
    #[error("calibration file {path}, line {line}: {reason}")]
    Calibration { path: String, line: usize, reason: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Words counted as subordinators or clause connectives.
pub const SUBORDINATORS: &[&str] = &[
    "after",
    "although",
    "as",
    "because",
    "before",
    "despite",
    "furthermore",
    "however",
    "if",
    "moreover",
    "nevertheless",
    "once",
    "since",
    "that",
    "therefore",
    "though",
    "unless",
    "until",
    "whereas",
    "whether",
    "which",
    "while",
    "who",
    "whom",
    "whose",
    "where",
    "when",
    "whenever",
];

pub const WEIGHT_LENGTH: f64 = 0.04;
pub const WEIGHT_RARITY: f64 = 0.5;
pub const WEIGHT_WORD_LENGTH: f64 = 0.05;
pub const WEIGHT_SUBORDINATORS: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CefrFeatures {
    pub length_words: usize,
    pub mean_word_rarity: f64,
    pub mean_word_length_chars: f64,
    pub subordinator_count: usize,
}

impl CefrFeatures {
    pub fn extract(sentence: &Sentence, lexicon: &Lexicon) -> Result<CefrFeatures, CefrError> {
        let words: Vec<_> = sentence.words().collect();
        let content: Vec<_> = words.iter().filter(|t| t.pos.is_content() && !lexicon.is_stopword(&t.lemma)).collect();
        if content.is_empty() {
            return Err(CefrError::EmptySentence(sentence.text()));
        }
        let rarity = content.iter().map(|t| 1.0 - lexicon.frequency_percentile(t.frequency)).sum::<f64>() / content.len() as f64;
        let chars = words.iter().map(|t| t.surface.chars().count()).sum::<usize>() as f64 / words.len() as f64;
        let subordinators = words.iter().filter(|t| SUBORDINATORS.contains(&t.surface.as_str())).count();
        Ok(CefrFeatures {
            length_words: words.len(),
            mean_word_rarity: rarity.clamp(0.0, 1.0),
            mean_word_length_chars: chars,
            subordinator_count: subordinators,
        })
    }

    pub fn score(&self) -> f64 {
        WEIGHT_LENGTH * self.length_words as f64
            + WEIGHT_RARITY * self.mean_word_rarity
            + WEIGHT_WORD_LENGTH * self.mean_word_length_chars
            + WEIGHT_SUBORDINATORS * self.subordinator_count as f64
    }
}

/// Five ascending cut points separating the six levels. A score `s` maps to
/// the level whose index is the number of cuts `<= s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CefrThresholds(pub [f64; 5]);

/// Cut points fitted once on `data/cefr_calibration.tsv` with
/// [`fit_thresholds`] and frozen.
pub const FROZEN_THRESHOLDS: CefrThresholds =
    CefrThresholds([0.5892491749174917, 0.8499391010529626, 1.187753695537621, 1.50059199669967, 2.0405404540454044]);

impl CefrThresholds {
    pub fn level(&self, score: f64) -> CefrLevel {
        let idx = self.0.iter().filter(|&&cut| cut <= score).count();
        CefrLevel::from_index(idx).expect("at most five cuts")
    }
}

/// Fits monotone cut points maximizing exact-match accuracy on `(score,
/// level)` samples. Exact dynamic program over the sorted distinct scores;
/// each cut is placed midway between the neighbouring assigned groups.
pub fn fit_thresholds(samples: &[(f64, CefrLevel)]) -> CefrThresholds {
    if samples.is_empty() {
        return CefrThresholds([0.0; 5]);
    }
    let mut sorted: Vec<(f64, CefrLevel)> = samples.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // groups of equal score with per-level counts
    let mut groups: Vec<(f64, [usize; 6])> = Vec::new();
    for (score, level) in sorted {
        match groups.last_mut() {
            Some((s, counts)) if *s == score => counts[level.index()] += 1,
            _ => {
                let mut counts = [0; 6];
                counts[level.index()] = 1;
                groups.push((score, counts));
            }
        }
    }
    let n = groups.len();
    // best[g][l]: max matches over groups 0..=g with group g at level l
    let mut best = vec![[0usize; 6]; n];
    let mut from = vec![[0usize; 6]; n];
    for g in 0..n {
        for l in 0..6 {
            let (prev, arg) =
                if g == 0 { (0, 0) } else { (0..=l).map(|p| (best[g - 1][p], p)).fold((0, 0), |acc, x| if x.0 > acc.0 { x } else { acc }) };
            best[g][l] = prev + groups[g].1[l];
            from[g][l] = arg;
        }
    }
    let mut assigned = vec![0usize; n];
    let mut l = (0..6).fold(0, |acc, x| if best[n - 1][x] > best[n - 1][acc] { x } else { acc });
    for g in (0..n).rev() {
        assigned[g] = l;
        l = from[g][l];
    }
    let lo = groups[0].0;
    let hi = groups[n - 1].0;
    let mut cuts = [0.0; 5];
    for (j, cut) in cuts.iter_mut().enumerate() {
        let boundary = j + 1;
        let below = (0..n).filter(|&g| assigned[g] < boundary).map(|g| groups[g].0).next_back();
        let above = (0..n).find(|&g| assigned[g] >= boundary).map(|g| groups[g].0);
        *cut = match (below, above) {
            (Some(b), Some(a)) => (a + b) / 2.0,
            (None, _) => lo - 1.0,
            (_, None) => hi + 1.0,
        };
    }
    CefrThresholds(cuts)
}

/// Source of sentence-level proficiency judgments.
pub trait CefrPredictor: Send + Sync {
    fn predict(&self, sentence: &Sentence, lexicon: &Lexicon) -> Result<CefrLevel, CefrError>;
}

#[derive(Debug, Clone, Copy)]
pub struct ProxyScorer {
    pub thresholds: CefrThresholds,
}

impl Default for ProxyScorer {
    fn default() -> Self {
        Self { thresholds: FROZEN_THRESHOLDS }
    }
}

impl CefrPredictor for ProxyScorer {
    fn predict(&self, sentence: &Sentence, lexicon: &Lexicon) -> Result<CefrLevel, CefrError> {
        let features = CefrFeatures::extract(sentence, lexicon)?;
        Ok(self.thresholds.level(features.score()))
    }
}

/// Scores with the frozen proxy.
pub fn score_cefr(sentence: &Sentence, lexicon: &Lexicon) -> Result<CefrLevel, CefrError> {
    ProxyScorer::default().predict(sentence, lexicon)
}

pub fn attach_cefr(concepts: &ConceptSet, level: CefrLevel) -> LabeledConceptSet {
    LabeledConceptSet::from_concepts(concepts).with_cefr(Some(level))
}

/// Scores every pair's sentence. In strict mode an unscorable sentence is an
/// error; otherwise it is logged and skipped.
pub fn tag_dataset(
    pairs: &[ConceptSentencePair],
    lexicon: &Lexicon,
    predictor: &dyn CefrPredictor,
    strict: bool,
) -> Result<Vec<(ConceptSentencePair, CefrLevel)>, CefrError> {
    let mut out = Vec::with_capacity(pairs.len());
    for pair in pairs {
        match predictor.predict(&pair.tokens(lexicon), lexicon) {
            Ok(level) => out.push((pair.clone(), level)),
            Err(e) if !strict => log::warn!("skipping pair {}: {e}", pair.id),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

pub const BUNDLED_CALIBRATION: &str = include_str!("../data/cefr_calibration.tsv");

/// Parses `sentence<TAB>level` lines; blank lines and `#` comments are ignored.
pub fn parse_calibration(text: &str, origin: &str) -> Result<Vec<(String, CefrLevel)>, CefrError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| CefrError::Calibration { path: origin.to_string(), line: i + 1, reason };
        let (sentence, level) = line.rsplit_once('\t').ok_or_else(|| err("expected sentence<TAB>level".into()))?;
        let level = level.parse().map_err(|e: CefrError| err(e.to_string()))?;
        rows.push((sentence.to_string(), level));
    }
    Ok(rows)
}

pub fn read_calibration(path: &Path) -> Result<Vec<(String, CefrLevel)>, CefrError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    parse_calibration(&text, &path.display().to_string())
}

/// Proxy scores for calibration rows; sentences with no content tokens are
/// skipped.
pub fn calibration_scores(rows: &[(String, CefrLevel)], lexicon: &Lexicon) -> Vec<(f64, CefrLevel)> {
    rows.iter()
        .filter_map(|(text, level)| {
            let features = CefrFeatures::extract(&Sentence::parse(text, lexicon), lexicon).ok()?;
            Some((features.score(), *level))
        })
        .collect()
}

pub fn accuracy(thresholds: &CefrThresholds, scored: &[(f64, CefrLevel)]) -> f64 {
    if scored.is_empty() {
        return 0.0;
    }
    scored.iter().filter(|(s, l)| thresholds.level(*s) == *l).count() as f64 / scored.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controls::parse_control_string;
    use proptest::prelude::*;

    fn lex() -> &'static Lexicon {
        Lexicon::bundled()
    }

    fn bundled_scores() -> Vec<(f64, CefrLevel)> {
        let rows = parse_calibration(BUNDLED_CALIBRATION, "bundled").unwrap();
        assert_eq!(rows.len(), 60);
        calibration_scores(&rows, lex())
    }

    #[test]
    fn frozen_thresholds_match_a_fresh_fit() {
        let scored = bundled_scores();
        assert_eq!(scored.len(), 60);
        let fitted = fit_thresholds(&scored);
        for (a, b) in fitted.0.iter().zip(FROZEN_THRESHOLDS.0.iter()) {
            assert!((a - b).abs() < 1e-9, "refit {:?} vs frozen {:?}", fitted.0, FROZEN_THRESHOLDS.0);
        }
    }

    #[test]
    fn frozen_thresholds_reach_calibration_accuracy() {
        let acc = accuracy(&FROZEN_THRESHOLDS, &bundled_scores());
        assert!(acc >= 0.8, "accuracy {acc}");
    }

    #[test]
    fn dp_fit_is_optimal_against_exhaustive_search() {
        // brute force over every monotone assignment of 7 distinct scores
        let levels = [0, 2, 1, 3, 5, 4, 5];
        let samples: Vec<(f64, CefrLevel)> =
            levels.iter().enumerate().map(|(i, &l)| (i as f64, CefrLevel::from_index(l).unwrap())).collect();
        let mut best = 0;
        let mut stack = vec![(0usize, 0usize, 0usize)];
        while let Some((pos, min_level, hits)) = stack.pop() {
            if pos == levels.len() {
                best = best.max(hits);
                continue;
            }
            for l in min_level..6 {
                stack.push((pos + 1, l, hits + usize::from(levels[pos] == l)));
            }
        }
        let fitted = fit_thresholds(&samples);
        let got = samples.iter().filter(|(s, l)| fitted.level(*s) == *l).count();
        assert_eq!(got, best);
        assert!(fitted.0.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn short_frequent_sentence_is_a1() {
        let s = Sentence::parse("the dog is big", lex());
        assert_eq!(score_cefr(&s, lex()).unwrap(), CefrLevel::A1);
        assert_eq!(score_cefr(&s, lex()).unwrap(), score_cefr(&s, lex()).unwrap());
    }

    #[test]
    fn empty_sentence_is_rejected() {
        let s = Sentence::parse("the of and", lex());
        assert!(matches!(score_cefr(&s, lex()), Err(CefrError::EmptySentence(_))));
    }

    #[test]
    fn appending_a_rare_word_never_lowers_the_level() {
        let base = Sentence::parse("the dog is big", lex());
        let more = Sentence::parse("the dog is big paradox", lex());
        assert!(score_cefr(&more, lex()).unwrap() >= score_cefr(&base, lex()).unwrap());
    }

    #[test]
    fn control_token_round_trip() {
        let set: ConceptSet = ["dog", "chase", "cat"].into_iter().collect();
        let labeled = attach_cefr(&set, CefrLevel::A1);
        assert!(labeled.to_string().starts_with("<CEFR:A1>"));
        let single: ConceptSet = ["x"].into_iter().collect();
        assert_eq!(attach_cefr(&single, CefrLevel::C2).to_string(), "<CEFR:C2> x");
        let back = parse_control_string(&labeled.to_string()).unwrap();
        assert_eq!(back.concepts(), set);
        assert_eq!(back.cefr(), Some(CefrLevel::A1));
    }

    #[test]
    fn tag_dataset_strict_and_lenient() {
        let good = crate::corpus::build_pairs(&[Sentence::parse("the dog chased the cat", lex())], lex(), &Default::default());
        let mut pairs = good.clone();
        pairs.push(ConceptSentencePair { id: "bad".into(), concepts: ConceptSet::new(), sentence: "of the".into(), source: "t".into() });
        let scorer = ProxyScorer::default();
        assert!(tag_dataset(&pairs, lex(), &scorer, true).is_err());
        let tagged = tag_dataset(&pairs, lex(), &scorer, false).unwrap();
        assert_eq!(tagged.len(), 1);
    }

    proptest! {
        #[test]
        fn level_is_monotone_in_each_feature(
            len in 1usize..60, rarity in 0.0f64..1.0, chars in 1.0f64..12.0, subs in 0usize..6,
            bump in 0usize..4, delta in 0.0f64..1.0,
        ) {
            let base = CefrFeatures { length_words: len, mean_word_rarity: rarity, mean_word_length_chars: chars, subordinator_count: subs };
            let level = |f: CefrFeatures| FROZEN_THRESHOLDS.level(f.score());
            let l0 = level(base);
            let longer = CefrFeatures { length_words: len + bump, ..base };
            let rarer = CefrFeatures { mean_word_rarity: (rarity + delta).min(1.0), ..base };
            let wordier = CefrFeatures { mean_word_length_chars: chars + delta, ..base };
            let subordinated = CefrFeatures { subordinator_count: subs + bump, ..base };
            for bumped in [longer, rarer, wordier, subordinated] {
                prop_assert!(level(bumped) >= l0);
            }
        }

        #[test]
        fn features_stay_in_range(words in proptest::collection::vec(proptest::sample::select(
            vec!["the", "dog", "paradox", "because", "ran", "quickly", "cat", ","]), 1..20)) {
            let s = Sentence::parse(&words.join(" "), lex());
            if let Ok(f) = CefrFeatures::extract(&s, lex()) {
                prop_assert!((0.0..=1.0).contains(&f.mean_word_rarity));
                prop_assert!(f.mean_word_length_chars > 0.0);
            }
        }
    }
}
