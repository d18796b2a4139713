//! Language-model scorers for perplexity.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::corpus::Sentence;
use crate::seq2seq::Seq2SeqModel;

pub trait LanguageScorer: Send + Sync {
    /// Summed natural-log probability of each word given the words before
    /// it. The end of the sentence is not scored.
    fn log_likelihood(&self, words: &[&str]) -> f64;
}

/// Every word has probability `1 / vocab_size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformScorer {
    pub vocab_size: usize,
}

impl LanguageScorer for UniformScorer {
    fn log_likelihood(&self, words: &[&str]) -> f64 {
        -(words.len() as f64) * (self.vocab_size as f64).ln()
    }
}

/// Scores with a trained seq2seq decoder conditioned on an empty input.
/// Words past the model's position limit are not scored.
pub struct ModelScorer<'a> {
    pub model: &'a Seq2SeqModel,
}

impl LanguageScorer for ModelScorer<'_> {
    fn log_likelihood(&self, words: &[&str]) -> f64 {
        let lp = self.model.token_log_probs::<&str, _>(&[], words);
        lp[..lp.len() - 1].iter().sum()
    }
}

const START: u32 = 0;
const END: u32 = 1;
const UNKNOWN: u32 = 2;
const RESERVED: [&str; 3] = ["<s>", "</s>", "<unk>"];

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Context {
    total: u64,
    /// Continuations seen once, twice, and three or more times.
    n: [u64; 3],
}

impl Context {
    fn add(&mut self, count: u64) {
        self.total += count;
        self.n[(count.min(3) - 1) as usize] += 1;
    }

    fn backoff_weight(&self, d: &[f64; 3]) -> f64 {
        (d[0] * self.n[0] as f64 + d[1] * self.n[1] as f64 + d[2] * self.n[2] as f64) / self.total as f64
    }
}

fn discount(d: &[f64; 3], count: u64) -> f64 {
    match count {
        0 => 0.0,
        c => d[(c.min(3) - 1) as usize],
    }
}

/// Count-of-count estimates of the three discounts, falling back to fixed
/// values when a count-of-count is zero.
fn estimate_discounts(counts: impl Iterator<Item = u64>) -> [f64; 3] {
    let mut n = [0f64; 5];
    for c in counts {
        if (1..=4).contains(&c) {
            n[c as usize] += 1.0;
        }
    }
    let y = n[1] / (n[1] + 2.0 * n[2]);
    let raw = [1.0 - 2.0 * y * n[2] / n[1], 2.0 - 3.0 * y * n[3] / n[2], 3.0 - 4.0 * y * n[4] / n[3]];
    let fallback = [0.5, 1.0, 1.5];
    let mut out = [0.0; 3];
    for k in 0..3 {
        let v = if raw[k].is_finite() { raw[k] } else { fallback[k] };
        out[k] = v.clamp(0.01, (k + 1) as f64 - 0.01);
    }
    out
}

#[derive(Serialize, Deserialize)]
struct CountsFile {
    format: String,
    version: u32,
    trigrams: Vec<(String, String, String, u64)>,
}

const FORMAT_NAME: &str = "trigram-kn";

/// Interpolated modified Kneser-Ney trigram model over lowercased words.
///
/// Lower orders use continuation counts, except for n-grams starting with
/// the sentence-start marker, which keep raw counts. Only raw trigram counts
/// are stored; everything else is derived on load.
#[derive(Debug, Clone)]
pub struct TrigramModel {
    words: Vec<String>,
    index: HashMap<String, u32>,
    trigrams: HashMap<[u32; 3], u64>,
    trigram_contexts: HashMap<[u32; 2], Context>,
    bigrams: HashMap<[u32; 2], u64>,
    bigram_contexts: HashMap<u32, Context>,
    unigrams: Vec<u64>,
    unigram_context: Context,
    discounts: [[f64; 3]; 3],
}

impl PartialEq for TrigramModel {
    fn eq(&self, other: &Self) -> bool {
        self.counts() == other.counts()
    }
}

impl TrigramModel {
    pub fn train(sentences: &[Sentence]) -> TrigramModel {
        let mut words: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, u32> = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        let mut trigrams = HashMap::new();
        for s in sentences {
            let mut padded = vec![START, START];
            for t in s.words() {
                let w = t.surface.to_lowercase();
                let id = *index.entry(w.clone()).or_insert_with(|| {
                    words.push(w);
                    (words.len() - 1) as u32
                });
                padded.push(id);
            }
            if padded.len() == 2 {
                continue;
            }
            padded.push(END);
            for win in padded.windows(3) {
                *trigrams.entry([win[0], win[1], win[2]]).or_insert(0) += 1;
            }
        }
        Self::from_parts(words, index, trigrams)
    }

    fn from_parts(words: Vec<String>, index: HashMap<String, u32>, trigrams: HashMap<[u32; 3], u64>) -> TrigramModel {
        let mut trigram_contexts: HashMap<[u32; 2], Context> = HashMap::new();
        let mut raw_bigrams: HashMap<[u32; 2], u64> = HashMap::new();
        let mut left_extensions: HashMap<[u32; 2], u64> = HashMap::new();
        for (&[u, v, w], &c) in &trigrams {
            trigram_contexts.entry([u, v]).or_default().add(c);
            *raw_bigrams.entry([v, w]).or_insert(0) += c;
            *left_extensions.entry([v, w]).or_insert(0) += 1;
        }
        let bigrams: HashMap<[u32; 2], u64> =
            raw_bigrams.iter().map(|(&k, &raw)| (k, if k[0] == START { raw } else { left_extensions[&k] })).collect();
        let mut bigram_contexts: HashMap<u32, Context> = HashMap::new();
        let mut unigrams = vec![0u64; words.len()];
        for (&[v, w], &a) in &bigrams {
            bigram_contexts.entry(v).or_default().add(a);
            unigrams[w as usize] += 1;
        }
        let mut unigram_context = Context::default();
        for &a in unigrams.iter().filter(|&&a| a > 0) {
            unigram_context.add(a);
        }
        let discounts = [
            estimate_discounts(unigrams.iter().copied()),
            estimate_discounts(bigrams.values().copied()),
            estimate_discounts(trigrams.values().copied()),
        ];
        TrigramModel { words, index, trigrams, trigram_contexts, bigrams, bigram_contexts, unigrams, unigram_context, discounts }
    }

    /// Number of predictable word types, including the end marker and the
    /// unknown-word slot.
    pub fn vocab_size(&self) -> usize {
        self.words.len() - 1
    }

    fn id(&self, word: &str) -> u32 {
        match word {
            "<s>" => START,
            "</s>" => END,
            _ => self.index.get(&word.to_lowercase()).copied().unwrap_or(UNKNOWN),
        }
    }

    fn p1(&self, w: u32) -> f64 {
        let ctx = &self.unigram_context;
        let uniform = 1.0 / self.vocab_size() as f64;
        if ctx.total == 0 {
            return uniform;
        }
        let d = &self.discounts[0];
        let a = self.unigrams.get(w as usize).copied().unwrap_or(0);
        (a as f64 - discount(d, a)).max(0.0) / ctx.total as f64 + ctx.backoff_weight(d) * uniform
    }

    fn p2(&self, v: u32, w: u32) -> f64 {
        let Some(ctx) = self.bigram_contexts.get(&v) else { return self.p1(w) };
        let d = &self.discounts[1];
        let a = self.bigrams.get(&[v, w]).copied().unwrap_or(0);
        (a as f64 - discount(d, a)).max(0.0) / ctx.total as f64 + ctx.backoff_weight(d) * self.p1(w)
    }

    fn p3(&self, u: u32, v: u32, w: u32) -> f64 {
        let Some(ctx) = self.trigram_contexts.get(&[u, v]) else { return self.p2(v, w) };
        let d = &self.discounts[2];
        let c = self.trigrams.get(&[u, v, w]).copied().unwrap_or(0);
        (c as f64 - discount(d, c)).max(0.0) / ctx.total as f64 + ctx.backoff_weight(d) * self.p2(v, w)
    }

    /// `P(w | u v)`; `<s>` marks positions before the sentence start.
    pub fn probability(&self, u: &str, v: &str, w: &str) -> f64 {
        self.p3(self.id(u), self.id(v), self.id(w))
    }

    /// Predictable word types, for enumerating a distribution.
    pub fn predictable(&self) -> impl Iterator<Item = &str> {
        self.words.iter().skip(1).map(String::as_str)
    }

    fn counts(&self) -> Vec<(String, String, String, u64)> {
        let w = |id: u32| self.words[id as usize].clone();
        let mut out: Vec<_> = self.trigrams.iter().map(|(&[a, b, c], &n)| (w(a), w(b), w(c), n)).collect();
        out.sort();
        out
    }

    pub fn to_json(&self) -> String {
        let file = CountsFile { format: FORMAT_NAME.into(), version: 1, trigrams: self.counts() };
        serde_json::to_string(&file).expect("counts serialize")
    }

    pub fn from_json(text: &str) -> Result<TrigramModel, String> {
        let file: CountsFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if file.format != FORMAT_NAME || file.version != 1 {
            return Err(format!("unsupported language model format {} v{}", file.format, file.version));
        }
        let mut words: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, u32> = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        let mut intern = |w: String| -> u32 {
            *index.entry(w.clone()).or_insert_with(|| {
                words.push(w);
                (words.len() - 1) as u32
            })
        };
        let mut trigrams = HashMap::new();
        for (a, b, c, n) in file.trigrams {
            if n == 0 {
                return Err(format!("zero count for `{a} {b} {c}`"));
            }
            let key = [intern(a), intern(b), intern(c)];
            if key[2] == START || key[0] == END || key[1] == END {
                return Err("sentence markers out of place".into());
            }
            *trigrams.entry(key).or_insert(0) += n;
        }
        Ok(Self::from_parts(words, index, trigrams))
    }

    pub fn save(&self, path: &Path) -> Result<(), MetricsError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| MetricsError::io(path, e))?;
        }
        std::fs::write(path, self.to_json()).map_err(|e| MetricsError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<TrigramModel, MetricsError> {
        let text = std::fs::read_to_string(path).map_err(|e| MetricsError::io(path, e))?;
        Self::from_json(&text).map_err(|reason| MetricsError::Format { path: path.display().to_string(), reason })
    }
}

impl LanguageScorer for TrigramModel {
    fn log_likelihood(&self, words: &[&str]) -> f64 {
        let (mut u, mut v) = (START, START);
        let mut ll = 0.0;
        for w in words {
            let w = self.id(w);
            ll += self.p3(u, v, w).ln();
            (u, v) = (v, w);
        }
        ll
    }
}
