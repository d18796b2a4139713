use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::corpus::PairOptions;
use crate::seq2seq::{DecoderConfig, ModelConfig, TrainingConfig};
use crate::splitter::SplitSpec;

/// A pipeline run, read from TOML. Relative paths are resolved against the
/// config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PipelineConfig {
    pub run_dir: PathBuf,
    #[serde(default = "default_tag")]
    pub model_tag: String,
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub controls: ControlConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub decoder: DecoderConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
}

fn default_tag() -> String {
    "controlled".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CorpusConfig {
    /// Plain-text files, one sentence per line.
    pub paths: Vec<PathBuf>,
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    #[serde(default)]
    pub stopwords: Option<PathBuf>,
    #[serde(default = "default_min")]
    pub min_concepts: usize,
    #[serde(default = "default_max")]
    pub max_concepts: usize,
    #[serde(default = "default_source")]
    pub source: String,
}

fn default_min() -> usize {
    2
}

fn default_max() -> usize {
    5
}

fn default_source() -> String {
    "corpus".into()
}

impl CorpusConfig {
    pub fn pair_options(&self) -> PairOptions {
        PairOptions { min_concepts: self.min_concepts, max_concepts: self.max_concepts, source: self.source.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct SplitConfig {
    pub test_per_stratum: usize,
    pub high: f64,
    pub low: f64,
    pub val: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let s = SplitSpec::default();
        SplitConfig { test_per_stratum: s.test_per_stratum, high: s.high_fraction, low: s.low_fraction, val: s.val_fraction, seed: s.seed }
    }
}

impl SplitConfig {
    pub fn spec(&self) -> SplitSpec {
        SplitSpec {
            high_fraction: self.high,
            low_fraction: self.low,
            test_per_stratum: self.test_per_stratum,
            val_fraction: self.val,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct ControlConfig {
    pub cefr: bool,
    pub roles: bool,
    /// External SRL parses; the template parser is used when absent.
    pub parses: Option<PathBuf>,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig { cefr: true, roles: true, parses: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct EvaluateConfig {
    /// Reference sentences for the tf-idf table; the training split when
    /// absent.
    pub tfidf_corpus: Option<PathBuf>,
    /// Cap on the number of test pairs generated for.
    pub max_items: Option<usize>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<PipelineConfig, String> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<PipelineConfig, PipelineError> {
        let err = |reason: String| PipelineError::Config { path: path.to_path_buf(), reason };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(err)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.run_dir);
        self.corpus.paths.iter_mut().for_each(fix);
        for p in [&mut self.corpus.lexicon, &mut self.corpus.stopwords, &mut self.controls.parses, &mut self.evaluate.tfidf_corpus]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.corpus.paths.is_empty() {
            return Err("corpus.paths is empty".into());
        }
        if self.corpus.min_concepts == 0 || self.corpus.max_concepts < self.corpus.min_concepts {
            return Err("corpus concept bounds must satisfy 1 <= minConcepts <= maxConcepts".into());
        }
        if self.decoder.k == 0 {
            return Err("decoder.k must be at least 1".into());
        }
        if self.model_tag.is_empty() {
            return Err("modelTag is empty".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_defaults_and_resolves_paths() {
        let cfg = PipelineConfig::from_toml(
            r#"
            runDir = "runs/x"
            [corpus]
            paths = ["a.txt", "/abs/b.txt"]
            [model]
            modelWidth = 32
            [split]
            testPerStratum = 10
            "#,
            Path::new("/cfg"),
        )
        .unwrap();
        assert_eq!(cfg.run_dir, Path::new("/cfg/runs/x"));
        assert_eq!(cfg.corpus.paths, [PathBuf::from("/cfg/a.txt"), PathBuf::from("/abs/b.txt")]);
        assert_eq!(cfg.model.model_width, 32);
        assert_eq!(cfg.model.layers, ModelConfig::default().layers);
        assert_eq!(cfg.split.spec().test_per_stratum, 10);
        assert!(cfg.controls.cefr && cfg.controls.roles);
        assert!(PipelineConfig::from_toml("runDir = 'x'\n[corpus]\npaths = []", Path::new(".")).is_err());
        assert!(PipelineConfig::from_toml("runDir = 'x'\nbogus = 1\n[corpus]\npaths = ['a']", Path::new(".")).is_err());
    }
}
