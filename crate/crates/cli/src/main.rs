use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ctrlgen::cefr::ProxyScorer;
use ctrlgen::controls::{parse_control_string, serialize_controls, LabeledConceptSet};
use ctrlgen::corpus::{build_pairs, read_pairs, read_sentences, tokenize, write_pairs, Lexicon, PairOptions, Sentence};
use ctrlgen::jsonl::{read_records, write_records, ReadMode};
use ctrlgen::metrics::{read_batch, render_table, report, write_batch, BatchInput, GenerationRecord, TfidfTable, TrigramModel};
use ctrlgen::pipeline::service::{AppState, ModelBackend};
use ctrlgen::pipeline::{export_accepted, run_with_config, ItemStore, PipelineConfig, RunOptions, Stage, TaggedPair};
use ctrlgen::seq2seq::{continue_pretrain, generate_candidates, train, DecoderConfig, Example, ModelConfig, Seq2SeqModel, TrainingConfig};
use ctrlgen::splitter::{stratified_split, SplitSpec};
use ctrlgen::srl::{align_roles, ExternalParses, RoleParser, TemplateParser};

#[derive(Parser)]
#[command(name = "ctrlgen", version, about = "Controlled concept-to-sentence generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build concept-sentence pairs from plain-text corpora.
    Ingest(IngestArgs),
    /// Split a pairs file into train, validation and frequency-stratified test sets.
    Split(SplitArgs),
    /// Attach CEFR and role controls to a pairs file.
    Tag(TagArgs),
    /// Train a model on a tagged file.
    Train(TrainArgs),
    /// Generate sentences for one control input.
    Generate(GenerateArgs),
    /// Generate for every record of a tagged file, writing a batch file.
    GenerateBatch(GenerateBatchArgs),
    /// Score a batch file.
    Evaluate(EvaluateArgs),
    /// Build a trigram language model for perplexity.
    BuildLm(ReferenceArgs),
    /// Build a tf-idf table for the diversity metric.
    BuildTfidf(ReferenceArgs),
    /// Run the configured end-to-end pipeline.
    Pipeline {
        #[command(subcommand)]
        action: PipelineAction,
    },
    /// Serve the curation HTTP API.
    Serve(ServeArgs),
    /// Write accepted curation items in the dataset pair format.
    Export(ExportArgs),
}

#[derive(Args)]
struct LexiconArgs {
    /// Lexicon TSV (surface, lemma, POS, frequency); the bundled one when absent.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, requires = "lexicon")]
    stopwords: Option<PathBuf>,
}

impl LexiconArgs {
    fn load(&self) -> Result<Lexicon> {
        Ok(match &self.lexicon {
            Some(p) => Lexicon::load(p, self.stopwords.as_deref())?,
            None => Lexicon::bundled().clone(),
        })
    }
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    min_concepts: usize,
    #[arg(long, default_value_t = 5)]
    max_concepts: usize,
    #[arg(long, default_value = "corpus")]
    source: String,
    #[command(flatten)]
    lexicon: LexiconArgs,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 500)]
    test_per_stratum: usize,
    #[arg(long, default_value_t = 0.10)]
    high: f64,
    #[arg(long, default_value_t = 0.10)]
    low: f64,
    #[arg(long, default_value_t = 0.10)]
    val: f64,
    #[arg(long, default_value_t = 13)]
    seed: u64,
    /// Skip malformed records instead of failing.
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct TagArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Prepend the proxy CEFR level of each sentence.
    #[arg(long)]
    cefr: bool,
    /// Label each concept with its semantic role.
    #[arg(long)]
    roles: bool,
    /// External SRL parses to use instead of the template parser.
    #[arg(long, requires = "roles")]
    parses: Option<PathBuf>,
    #[command(flatten)]
    lexicon: LexiconArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// Tagged training file.
    #[arg(long = "train")]
    train: PathBuf,
    #[arg(long)]
    validation: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Continue training this checkpoint instead of starting fresh.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Where to write the per-epoch loss log (JSON).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    ff_width: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    max_positions: Option<usize>,
    #[command(flatten)]
    lexicon: LexiconArgs,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long, default_value_t = 50)]
    k: usize,
    #[arg(long = "max-len", default_value_t = 64)]
    max_len: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Length-penalty exponent used to rank candidates.
    #[arg(long, default_value_t = 1.0)]
    length_penalty: f64,
}

impl DecodeArgs {
    fn config(&self) -> DecoderConfig {
        DecoderConfig { k: self.k, max_length: self.max_len, seed: self.seed, length_penalty: self.length_penalty, ..Default::default() }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Control items such as "<CEFR:C2>".
    #[arg(long, default_value = "")]
    control: String,
    /// Comma-separated concepts, optionally with roles: "dog|ARG0,chase|V,cat|ARG1".
    #[arg(long)]
    concepts: String,
    /// Number of candidates, best first.
    #[arg(long, default_value_t = 1)]
    n: usize,
    /// Print full generations as JSON lines.
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Args)]
struct GenerateBatchArgs {
    #[arg(long)]
    model: PathBuf,
    /// Tagged input file.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "model")]
    tag: String,
    /// Generate without role controls (the inputs keep them for scoring).
    #[arg(long)]
    strip_roles: bool,
    #[command(flatten)]
    decode: DecodeArgs,
    #[command(flatten)]
    lexicon: LexiconArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    batch: PathBuf,
    /// Trigram model; perplexity is omitted without one.
    #[arg(long)]
    scorer: Option<PathBuf>,
    #[arg(long)]
    tfidf: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    lenient: bool,
    #[command(flatten)]
    lexicon: LexiconArgs,
}

#[derive(Args)]
struct ReferenceArgs {
    /// Pairs files (`.jsonl`) or plain-text sentence files.
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    lexicon: LexiconArgs,
}

#[derive(Subcommand)]
enum PipelineAction {
    Run {
        config: PathBuf,
        /// Re-run every stage.
        #[arg(long)]
        force: bool,
        #[arg(long)]
        stop_after: Option<Stage>,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    store: PathBuf,
    /// tf-idf table for the diversity snapshot; without one every word gets idf 0.
    #[arg(long)]
    tfidf: Option<PathBuf>,
    #[command(flatten)]
    decode: DecodeArgs,
    #[command(flatten)]
    lexicon: LexiconArgs,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Ingest(a) => ingest(a),
        Command::Split(a) => split(a),
        Command::Tag(a) => tag(a),
        Command::Train(a) => train_cmd(a),
        Command::Generate(a) => generate_cmd(a),
        Command::GenerateBatch(a) => generate_batch(a),
        Command::Evaluate(a) => evaluate(a),
        Command::BuildLm(a) => build_lm(a),
        Command::BuildTfidf(a) => build_tfidf(a),
        Command::Pipeline { action: PipelineAction::Run { config, force, stop_after } } => {
            let cfg = PipelineConfig::load(&config)?;
            let summary = run_with_config(&cfg, &RunOptions { force, stop_after })?;
            for s in &summary.skipped {
                println!("{s}: up to date");
            }
            for s in &summary.executed {
                println!("{s}: done");
            }
            println!("run directory: {}", summary.run_dir.display());
            Ok(())
        }
        Command::Serve(a) => serve(a),
        Command::Export(a) => {
            let store = ItemStore::open(&a.store)?;
            let n = export_accepted(&store, &a.out)?;
            println!("exported {n} accepted items to {}", a.out.display());
            Ok(())
        }
    }
}

fn ingest(a: IngestArgs) -> Result<()> {
    let lex = a.lexicon.load()?;
    let mut sentences = Vec::new();
    for p in &a.inputs {
        sentences.extend(read_sentences(p, &lex)?);
    }
    let options = PairOptions { min_concepts: a.min_concepts, max_concepts: a.max_concepts, source: a.source };
    if options.min_concepts == 0 || options.max_concepts < options.min_concepts {
        bail!("concept bounds must satisfy 1 <= min <= max");
    }
    let pairs = build_pairs(&sentences, &lex, &options);
    write_pairs(&pairs, &a.out)?;
    println!("{} sentences, {} pairs written to {}", sentences.len(), pairs.len(), a.out.display());
    Ok(())
}

fn split(a: SplitArgs) -> Result<()> {
    let mode = if a.lenient { ReadMode::Lenient } else { ReadMode::Strict };
    let read = read_pairs(&a.input, mode)?;
    let spec =
        SplitSpec { high_fraction: a.high, low_fraction: a.low, test_per_stratum: a.test_per_stratum, val_fraction: a.val, seed: a.seed };
    let parts = stratified_split(&read.pairs, &spec)?;
    for (name, part) in parts.parts() {
        let path = a.out_dir.join(format!("{name}.jsonl"));
        write_pairs(part, &path)?;
        println!("{name}: {} pairs", part.len());
    }
    Ok(())
}

fn tag(a: TagArgs) -> Result<()> {
    if !a.cefr && !a.roles {
        bail!("nothing to tag: pass --cefr, --roles or both");
    }
    let lex = a.lexicon.load()?;
    let pairs = read_pairs(&a.input, ReadMode::Strict)?.pairs;
    let external = a.parses.as_deref().map(|p| ExternalParses::load(p, ReadMode::Strict)).transpose()?.map(|(e, _)| e);
    let parser: &dyn RoleParser = match &external {
        Some(e) => e,
        None => &TemplateParser,
    };
    let scorer = ProxyScorer::default();
    let mut out = Vec::with_capacity(pairs.len());
    let mut dropped = 0;
    for pair in &pairs {
        let sentence = pair.tokens(&lex);
        let mut labeled = LabeledConceptSet::from_concepts(&pair.concepts);
        if a.roles {
            match parser.parse(&sentence) {
                Ok(parse) => labeled = align_roles(&parse, &pair.concepts, &sentence),
                Err(e) => {
                    log::warn!("dropping {}: {e}", pair.id);
                    dropped += 1;
                    continue;
                }
            }
        }
        if a.cefr {
            match ctrlgen::cefr::CefrPredictor::predict(&scorer, &sentence, &lex) {
                Ok(level) => labeled = labeled.with_cefr(Some(level)),
                Err(e) => {
                    log::warn!("dropping {}: {e}", pair.id);
                    dropped += 1;
                    continue;
                }
            }
        }
        out.push(TaggedPair { id: pair.id.clone(), input: BatchInput::from_labeled(&labeled), sentence: pair.sentence.clone() });
    }
    write_records(&a.out, &out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("{} tagged, {dropped} dropped", out.len());
    Ok(())
}

fn read_tagged(path: &Path) -> Result<Vec<(TaggedPair, LabeledConceptSet)>> {
    let (records, _) = read_records(path, ReadMode::Strict, |r: &TaggedPair| r.input.to_labeled().map(drop))
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(records
        .into_iter()
        .map(|r| {
            let l = r.input.to_labeled().expect("validated while reading");
            (r, l)
        })
        .collect())
}

fn tagged_examples(path: &Path, lex: &Lexicon) -> Result<Vec<Example>> {
    Ok(read_tagged(path)?.iter().map(|(t, l)| Example::from_labeled(l, &tokenize(&t.sentence, lex))).collect())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let lex = a.lexicon.load()?;
    let examples = tagged_examples(&a.train, &lex)?;
    let validation = match &a.validation {
        Some(p) => tagged_examples(p, &lex)?,
        None => Vec::new(),
    };
    let base = if a.init.is_some() { TrainingConfig::continued() } else { TrainingConfig::default() };
    let tcfg = TrainingConfig {
        epochs: a.epochs.unwrap_or(base.epochs),
        batch_size: a.batch_size.unwrap_or(base.batch_size),
        learning_rate: a.lr.unwrap_or(base.learning_rate),
        seed: a.seed.unwrap_or(base.seed),
        clip_norm: base.clip_norm,
    };
    let (model, log) = match &a.init {
        Some(init) => {
            let start = Seq2SeqModel::load(init).with_context(|| format!("loading {}", init.display()))?;
            continue_pretrain(&start, &examples, &validation, &tcfg)?
        }
        None => {
            let d = ModelConfig::default();
            let mcfg = ModelConfig {
                layers: a.layers.unwrap_or(d.layers),
                attention_heads: a.heads.unwrap_or(d.attention_heads),
                model_width: a.width.unwrap_or(d.model_width),
                feed_forward_width: a.ff_width.unwrap_or(d.feed_forward_width),
                dropout_rate: a.dropout.unwrap_or(d.dropout_rate),
                max_positions: a.max_positions.unwrap_or(d.max_positions),
            };
            train(&examples, &validation, &tcfg, &mcfg)?
        }
    };
    model.save(&a.out)?;
    if let Some(p) = &a.log {
        std::fs::write(p, serde_json::to_string_pretty(&log)? + "\n")?;
    }
    println!(
        "{} parameters; final train loss {}; saved {}",
        model.parameter_count(),
        log.final_train_loss().map_or("-".into(), |l| format!("{l:.4}")),
        a.out.display()
    );
    Ok(())
}

fn generate_cmd(a: GenerateArgs) -> Result<()> {
    let model = Seq2SeqModel::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let concepts: Vec<&str> = a.concepts.split(',').map(str::trim).filter(|c| !c.is_empty()).collect();
    let text = format!("{} {}", a.control, concepts.join(" "));
    let input = parse_control_string(text.trim())?;
    if a.n == 0 || a.decode.k == 0 {
        bail!("--n and --k must be at least 1");
    }
    let tokens = serialize_controls(&input);
    for g in generate_candidates(&model, &tokens, &a.decode.config(), a.n) {
        if a.json {
            println!("{}", serde_json::to_string(&g)?);
        } else {
            println!("{}", g.text);
        }
    }
    Ok(())
}

fn generate_batch(a: GenerateBatchArgs) -> Result<()> {
    let lex = a.lexicon.load()?;
    let model = Seq2SeqModel::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let dcfg = a.decode.config();
    let records: Vec<GenerationRecord> = read_tagged(&a.input)?
        .into_iter()
        .enumerate()
        .map(|(i, (_, input))| {
            let prompt = if a.strip_roles { input.without_roles() } else { input.clone() };
            let seeded = DecoderConfig { seed: dcfg.seed.wrapping_add(i as u64), ..dcfg };
            let mut best = generate_candidates(&model, &serialize_controls(&prompt), &seeded, 1);
            let g = best.remove(0);
            GenerationRecord { input, output: Sentence::parse(&g.text, &lex), model_tag: a.tag.clone() }
        })
        .collect();
    write_batch(&a.out, &records)?;
    println!("{} generations written to {}", records.len(), a.out.display());
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let lex = a.lexicon.load()?;
    let mode = if a.lenient { ReadMode::Lenient } else { ReadMode::Strict };
    let (records, _) = read_batch(&a.batch, &lex, mode)?;
    let table = TfidfTable::load(&a.tfidf)?;
    let lm = a.scorer.as_deref().map(TrigramModel::load).transpose()?;
    let reports = report(&records, lm.as_ref().map(|m| m as _), &table, &TemplateParser, &lex)?;
    print!("{}", render_table(&reports));
    if let Some(p) = &a.json {
        std::fs::write(p, serde_json::to_string_pretty(&reports)? + "\n")?;
    }
    Ok(())
}

fn reference_sentences(a: &ReferenceArgs, lex: &Lexicon) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    for p in &a.inputs {
        if p.extension().is_some_and(|e| e == "jsonl") {
            out.extend(read_pairs(p, ReadMode::Strict)?.pairs.iter().map(|pair| pair.tokens(lex)));
        } else {
            out.extend(read_sentences(p, lex)?);
        }
    }
    Ok(out)
}

fn build_lm(a: ReferenceArgs) -> Result<()> {
    let lex = a.lexicon.load()?;
    let sentences = reference_sentences(&a, &lex)?;
    let lm = TrigramModel::train(&sentences);
    lm.save(&a.out)?;
    println!("trigram model over {} sentences ({} word types) saved to {}", sentences.len(), lm.vocab_size(), a.out.display());
    Ok(())
}

fn build_tfidf(a: ReferenceArgs) -> Result<()> {
    let lex = a.lexicon.load()?;
    let sentences = reference_sentences(&a, &lex)?;
    let table = TfidfTable::build(&sentences, &lex);
    table.save(&a.out)?;
    println!("tf-idf table over {} documents ({} lemmas) saved to {}", table.documents(), table.len(), a.out.display());
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let lex = a.lexicon.load()?;
    let model = Seq2SeqModel::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let table = match &a.tfidf {
        Some(p) => TfidfTable::load(p)?,
        None => TfidfTable::from_idf([], 0),
    };
    let store = Arc::new(ItemStore::open(&a.store)?);
    let backend = Arc::new(ModelBackend::new(model, lex, table, a.decode.config()));
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener =
            tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await.with_context(|| format!("binding {}:{}", a.host, a.port))?;
        log::info!("listening on {}", listener.local_addr()?);
        ctrlgen::pipeline::service::serve(listener, AppState::new(store, backend)).await?;
        Ok(())
    })
}
