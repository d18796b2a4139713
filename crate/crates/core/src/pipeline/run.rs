use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::config::PipelineConfig;
use super::{BoxError, PipelineError, TaggedPair};
use crate::cefr::{CefrPredictor, ProxyScorer};
use crate::controls::{serialize_controls, LabeledConceptSet};
use crate::corpus::{build_pairs, read_pairs, read_sentences, write_pairs, Lexicon, Sentence};
use crate::jsonl::{read_records, write_records, ReadMode};
use crate::metrics::{read_batch, render_table, report, write_batch, BatchInput, GenerationRecord, TfidfTable, TrigramModel};
use crate::seq2seq::{generate, train, DecoderConfig, Example, Seq2SeqModel};
use crate::splitter::stratified_split;
use crate::srl::{align_roles, ExternalParses, RoleParser, TemplateParser};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Split,
    Tag,
    Train,
    Generate,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Ingest, Stage::Split, Stage::Tag, Stage::Train, Stage::Generate, Stage::Evaluate];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Split => "split",
            Stage::Tag => "tag",
            Stage::Train => "train",
            Stage::Generate => "generate",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL.into_iter().find(|st| st.as_str() == s).ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPLIT_NAMES: [&str; 4] = ["train", "validation", "test_high", "test_low"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDigest {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    /// Digest of the stage's configuration and everything upstream of it.
    pub fingerprint: String,
    pub outputs: Vec<OutputDigest>,
    pub summary: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Seeds {
    pub split: u64,
    pub training: u64,
    pub decoder: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Manifest {
    pub version: u32,
    pub seeds: Seeds,
    pub config: Value,
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn stage(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    pub fn load(run_dir: &Path) -> Option<Manifest> {
        let text = fs::read_to_string(run_dir.join(MANIFEST_FILE)).ok()?;
        serde_json::from_str(&text).ok()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Re-run every stage even when its recorded outputs are current.
    pub force: bool,
    pub stop_after: Option<Stage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub executed: Vec<Stage>,
    pub skipped: Vec<Stage>,
    pub manifest: Manifest,
}

pub fn run_pipeline(config_file: &Path) -> Result<RunSummary, PipelineError> {
    let cfg = PipelineConfig::load(config_file)?;
    run_with_config(&cfg, &RunOptions::default())
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn file_digest(path: &Path) -> Result<String, BoxError> {
    sha256_file(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

/// Loaded lazily so that a bad lexicon path is reported by the ingest stage.
enum LexiconSource {
    Bundled,
    Owned(Lexicon),
}

impl LexiconSource {
    fn get(&self) -> &Lexicon {
        match self {
            LexiconSource::Bundled => Lexicon::bundled(),
            LexiconSource::Owned(l) => l,
        }
    }
}

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    dir: &'a Path,
    lexicon: Option<LexiconSource>,
}

impl Ctx<'_> {
    fn lexicon(&mut self) -> Result<&Lexicon, BoxError> {
        if self.lexicon.is_none() {
            let source = match &self.cfg.corpus.lexicon {
                Some(path) => LexiconSource::Owned(Lexicon::load(path, self.cfg.corpus.stopwords.as_deref())?),
                None => LexiconSource::Bundled,
            };
            self.lexicon = Some(source);
        }
        Ok(self.lexicon.as_ref().expect("set above").get())
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }
}

type StageOutput = (Vec<String>, BTreeMap<String, Value>);

pub fn run_with_config(cfg: &PipelineConfig, opts: &RunOptions) -> Result<RunSummary, PipelineError> {
    let dir = cfg.run_dir.as_path();
    fs::create_dir_all(dir).map_err(|source| PipelineError::Io { path: dir.to_path_buf(), source })?;
    let previous = if opts.force { None } else { Manifest::load(dir) };
    let mut manifest = Manifest {
        version: 1,
        seeds: Seeds { split: cfg.split.seed, training: cfg.training.seed, decoder: cfg.decoder.seed },
        config: serde_json::to_value(cfg).expect("config serializes"),
        stages: Vec::new(),
    };
    let mut ctx = Ctx { cfg, dir, lexicon: None };
    let (mut executed, mut skipped) = (Vec::new(), Vec::new());
    let mut upstream = String::new();

    for stage in Stage::ALL {
        let fail = |source: BoxError| PipelineError::Stage { stage, source };
        let fingerprint = fingerprint(&ctx, stage, &upstream).map_err(fail)?;
        let reusable =
            previous.as_ref().and_then(|m| m.stage(stage)).filter(|r| r.fingerprint == fingerprint && outputs_intact(dir, &r.outputs));
        let record = match reusable {
            Some(r) => {
                log::info!("stage {stage}: up to date");
                skipped.push(stage);
                r.clone()
            }
            None => {
                log::info!("stage {stage}: running");
                let (outputs, summary) = run_stage(&mut ctx, stage).map_err(fail)?;
                let outputs = outputs
                    .into_iter()
                    .map(|rel| Ok(OutputDigest { sha256: file_digest(&dir.join(&rel))?, path: rel }))
                    .collect::<Result<Vec<_>, BoxError>>()
                    .map_err(fail)?;
                executed.push(stage);
                StageRecord { stage, fingerprint, outputs, summary }
            }
        };
        upstream = format!("{}:{}", record.fingerprint, record.outputs.iter().map(|o| o.sha256.as_str()).collect::<Vec<_>>().join(","));
        manifest.stages.push(record);
        write_manifest(dir, &manifest)?;
        if opts.stop_after == Some(stage) {
            break;
        }
    }
    Ok(RunSummary { run_dir: dir.to_path_buf(), executed, skipped, manifest })
}

fn outputs_intact(dir: &Path, outputs: &[OutputDigest]) -> bool {
    outputs.iter().all(|o| sha256_file(&dir.join(&o.path)).is_ok_and(|d| d == o.sha256))
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<(), PipelineError> {
    let path = dir.join(MANIFEST_FILE);
    let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes") + "\n";
    fs::write(&tmp, text).and_then(|()| fs::rename(&tmp, &path)).map_err(|source| PipelineError::Io { path, source })
}

fn fingerprint(ctx: &Ctx, stage: Stage, upstream: &str) -> Result<String, BoxError> {
    let cfg = ctx.cfg;
    let digests = |paths: &[&PathBuf]| paths.iter().map(|p| file_digest(p)).collect::<Result<Vec<_>, _>>();
    let described = match stage {
        Stage::Ingest => {
            let mut files: Vec<&PathBuf> = cfg.corpus.paths.iter().collect();
            files.extend(cfg.corpus.lexicon.iter().chain(&cfg.corpus.stopwords));
            json!({ "corpus": cfg.corpus, "digests": digests(&files)? })
        }
        Stage::Split => json!(cfg.split),
        Stage::Tag => {
            let files: Vec<&PathBuf> = cfg.controls.parses.iter().collect();
            json!({ "controls": cfg.controls, "digests": digests(&files)? })
        }
        Stage::Train => json!({ "model": cfg.model, "training": cfg.training }),
        Stage::Generate => json!({ "decoder": cfg.decoder, "maxItems": cfg.evaluate.max_items, "modelTag": cfg.model_tag }),
        Stage::Evaluate => {
            let files: Vec<&PathBuf> = cfg.evaluate.tfidf_corpus.iter().collect();
            json!({ "evaluate": cfg.evaluate, "digests": digests(&files)? })
        }
    };
    let mut h = Sha256::new();
    h.update(upstream.as_bytes());
    h.update(stage.as_str().as_bytes());
    h.update(described.to_string().as_bytes());
    Ok(hex::encode(h.finalize()))
}

fn run_stage(ctx: &mut Ctx, stage: Stage) -> Result<StageOutput, BoxError> {
    match stage {
        Stage::Ingest => ingest(ctx),
        Stage::Split => split(ctx),
        Stage::Tag => tag(ctx),
        Stage::Train => train_stage(ctx),
        Stage::Generate => generate_stage(ctx),
        Stage::Evaluate => evaluate(ctx),
    }
}

fn summary(items: impl IntoIterator<Item = (&'static str, Value)>) -> BTreeMap<String, Value> {
    items.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn ingest(ctx: &mut Ctx) -> Result<StageOutput, BoxError> {
    let paths = ctx.cfg.corpus.paths.clone();
    let options = ctx.cfg.corpus.pair_options();
    let lex = ctx.lexicon()?;
    let mut sentences = Vec::new();
    for p in &paths {
        sentences.extend(read_sentences(p, lex)?);
    }
    let pairs = build_pairs(&sentences, lex, &options);
    write_pairs(&pairs, &ctx.path("pairs.jsonl"))?;
    Ok((vec!["pairs.jsonl".into()], summary([("sentences", json!(sentences.len())), ("pairs", json!(pairs.len()))])))
}

fn split_path(name: &str) -> String {
    format!("splits/{name}.jsonl")
}

fn tagged_path(name: &str) -> String {
    format!("tagged/{name}.jsonl")
}

fn split(ctx: &mut Ctx) -> Result<StageOutput, BoxError> {
    let pairs = read_pairs(&ctx.path("pairs.jsonl"), ReadMode::Strict)?.pairs;
    let parts = stratified_split(&pairs, &ctx.cfg.split.spec())?;
    let mut outputs = Vec::new();
    let mut sizes = BTreeMap::new();
    for (name, part) in parts.parts() {
        let rel = split_path(name);
        write_pairs(part, &ctx.path(&rel))?;
        sizes.insert(name.to_string(), json!(part.len()));
        outputs.push(rel);
    }
    Ok((outputs, sizes))
}

fn tag(ctx: &mut Ctx) -> Result<StageOutput, BoxError> {
    let controls = ctx.cfg.controls.clone();
    let external = match &controls.parses {
        Some(p) if controls.roles => Some(ExternalParses::load(p, ReadMode::Strict)?.0),
        _ => None,
    };
    let parser: &dyn RoleParser = match &external {
        Some(e) => e,
        None => &TemplateParser,
    };
    let scorer = ProxyScorer::default();
    let dir = ctx.dir.to_path_buf();
    let lex = ctx.lexicon()?;
    let mut outputs = Vec::new();
    let mut stats = BTreeMap::new();
    for name in SPLIT_NAMES {
        let pairs = read_pairs(&dir.join(split_path(name)), ReadMode::Strict)?.pairs;
        let mut tagged = Vec::with_capacity(pairs.len());
        let mut dropped = 0usize;
        for pair in &pairs {
            let sentence = pair.tokens(lex);
            let mut labeled = LabeledConceptSet::from_concepts(&pair.concepts);
            if controls.roles {
                match parser.parse(&sentence) {
                    Ok(parse) => labeled = align_roles(&parse, &pair.concepts, &sentence),
                    Err(e) => {
                        log::warn!("tag: dropping pair {}: {e}", pair.id);
                        dropped += 1;
                        continue;
                    }
                }
            }
            if controls.cefr {
                match scorer.predict(&sentence, lex) {
                    Ok(level) => labeled = labeled.with_cefr(Some(level)),
                    Err(e) => {
                        log::warn!("tag: dropping pair {}: {e}", pair.id);
                        dropped += 1;
                        continue;
                    }
                }
            }
            tagged.push(TaggedPair { id: pair.id.clone(), input: BatchInput::from_labeled(&labeled), sentence: pair.sentence.clone() });
        }
        let rel = tagged_path(name);
        write_records(&dir.join(&rel), &tagged)?;
        stats.insert(format!("{name}Tagged"), json!(tagged.len()));
        stats.insert(format!("{name}Dropped"), json!(dropped));
        outputs.push(rel);
    }
    Ok((outputs, stats))
}

fn read_tagged(path: &Path) -> Result<Vec<(TaggedPair, LabeledConceptSet)>, BoxError> {
    let (records, _) = read_records(path, ReadMode::Strict, |r: &TaggedPair| r.input.to_labeled().map(drop))?;
    Ok(records
        .into_iter()
        .map(|r| {
            let labeled = r.input.to_labeled().expect("validated while reading");
            (r, labeled)
        })
        .collect())
}

fn examples(ctx: &mut Ctx, name: &str) -> Result<Vec<Example>, BoxError> {
    let tagged = read_tagged(&ctx.path(&tagged_path(name)))?;
    let lex = ctx.lexicon()?;
    Ok(tagged.iter().map(|(t, labeled)| Example::from_labeled(labeled, &crate::corpus::tokenize(&t.sentence, lex))).collect())
}

fn train_stage(ctx: &mut Ctx) -> Result<StageOutput, BoxError> {
    let train_set = examples(ctx, "train")?;
    let validation = examples(ctx, "validation")?;
    let (model, log) = train(&train_set, &validation, &ctx.cfg.training, &ctx.cfg.model)?;
    fs::create_dir_all(ctx.path("model"))?;
    model.save(&ctx.path("model/model.ckpt"))?;
    fs::write(ctx.path("model/training_log.json"), serde_json::to_string_pretty(&log)? + "\n")?;
    Ok((
        vec!["model/model.ckpt".into(), "model/training_log.json".into()],
        summary([
            ("parameters", json!(model.parameter_count())),
            ("vocabulary", json!(model.vocabulary().len())),
            ("finalTrainLoss", json!(log.final_train_loss())),
        ]),
    ))
}

fn generate_stage(ctx: &mut Ctx) -> Result<StageOutput, BoxError> {
    let model = Seq2SeqModel::load(&ctx.path("model/model.ckpt"))?;
    let mut inputs = Vec::new();
    for name in ["test_high", "test_low"] {
        let mut part = read_tagged(&ctx.path(&tagged_path(name)))?;
        if let Some(cap) = ctx.cfg.evaluate.max_items {
            part.truncate(cap);
        }
        inputs.extend(part.into_iter().map(|(_, labeled)| labeled));
    }
    let dcfg = ctx.cfg.decoder;
    let tag = ctx.cfg.model_tag.clone();
    let lex = ctx.lexicon()?;
    let records: Vec<GenerationRecord> = inputs
        .into_iter()
        .enumerate()
        .map(|(i, input)| {
            let seeded = DecoderConfig { seed: dcfg.seed.wrapping_add(i as u64), ..dcfg };
            let g = generate(&model, &serialize_controls(&input), &seeded);
            GenerationRecord { input, output: Sentence::parse(&g.text, lex), model_tag: tag.clone() }
        })
        .collect();
    write_batch(&ctx.path("generations.jsonl"), &records)?;
    Ok((vec!["generations.jsonl".into()], summary([("records", json!(records.len()))])))
}

fn evaluate(ctx: &mut Ctx) -> Result<StageOutput, BoxError> {
    let train_pairs = read_pairs(&ctx.path(&split_path("train")), ReadMode::Strict)?.pairs;
    let tfidf_corpus = ctx.cfg.evaluate.tfidf_corpus.clone();
    let dir = ctx.dir.to_path_buf();
    let lex = ctx.lexicon()?;
    let train_sentences: Vec<Sentence> = train_pairs.iter().map(|p| p.tokens(lex)).collect();
    let lm = TrigramModel::train(&train_sentences);
    let reference = match tfidf_corpus {
        Some(p) => read_sentences(&p, lex)?,
        None => train_sentences,
    };
    let table = TfidfTable::build(&reference, lex);
    fs::create_dir_all(dir.join("eval"))?;
    lm.save(&dir.join("eval/trigram.lm"))?;
    table.save(&dir.join("eval/tfidf.idf"))?;
    let (records, _) = read_batch(&dir.join("generations.jsonl"), lex, ReadMode::Strict)?;
    let reports = report(&records, Some(&lm), &table, &TemplateParser, lex)?;
    fs::write(dir.join("report.txt"), render_table(&reports))?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&reports)? + "\n")?;
    Ok((
        vec!["eval/trigram.lm".into(), "eval/tfidf.idf".into(), "report.txt".into(), "report.json".into()],
        summary([("records", json!(records.len()))]),
    ))
}
