use std::path::{Path, PathBuf};

use ctrlgen::pipeline::{run_pipeline, run_with_config, Manifest, PipelineConfig, RunOptions, Stage};

const TOY_CORPUS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/toy/corpus.txt");

fn config(dir: &Path, corpus: &str) -> PipelineConfig {
    let text = format!(
        r#"runDir = "run"
modelTag = "toy"

[corpus]
paths = ["{corpus}"]
source = "toy"

[split]
testPerStratum = 20
seed = 4

[model]
layers = 1
attentionHeads = 2
modelWidth = 16
feedForwardWidth = 32
dropoutRate = 0.0
maxPositions = 32

[training]
epochs = 1
batchSize = 32
learningRate = 0.003
seed = 4

[decoder]
k = 5
maxLength = 24
seed = 9

[evaluate]
maxItems = 10
"#
    );
    let path = dir.join("toy.toml");
    std::fs::write(&path, &text).unwrap();
    PipelineConfig::load(&path).unwrap()
}

fn run_dir(dir: &Path) -> PathBuf {
    dir.join("run")
}

#[test]
fn toy_run_produces_every_artifact_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), TOY_CORPUS);
    let first = run_with_config(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(first.executed, Stage::ALL.to_vec());
    let run = run_dir(dir.path());
    for rel in [
        "pairs.jsonl",
        "splits/train.jsonl",
        "splits/validation.jsonl",
        "splits/test_high.jsonl",
        "splits/test_low.jsonl",
        "tagged/train.jsonl",
        "model/model.ckpt",
        "model/training_log.json",
        "generations.jsonl",
        "eval/trigram.lm",
        "eval/tfidf.idf",
        "report.txt",
        "report.json",
        "manifest.json",
    ] {
        assert!(run.join(rel).is_file(), "missing {rel}");
    }
    let report = std::fs::read_to_string(run.join("report.txt")).unwrap();
    assert!(report.contains("toy"), "{report}");
    let generations = std::fs::read_to_string(run.join("generations.jsonl")).unwrap();
    assert_eq!(generations.lines().count(), 20);
    let manifest = Manifest::load(&run).unwrap();
    assert_eq!(manifest.seeds.split, 4);
    assert_eq!(manifest.seeds.decoder, 9);

    let second = run_with_config(&cfg, &RunOptions::default()).unwrap();
    assert!(second.executed.is_empty());
    assert_eq!(second.skipped, Stage::ALL.to_vec());
    assert_eq!(second.manifest, first.manifest);

    std::fs::remove_file(run.join("model/model.ckpt")).unwrap();
    let third = run_with_config(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(third.executed, vec![Stage::Train]);
    assert_eq!(third.manifest, first.manifest);

    let forced = run_with_config(&cfg, &RunOptions { force: true, stop_after: None }).unwrap();
    assert_eq!(forced.executed, Stage::ALL.to_vec());
    assert_eq!(forced.manifest, first.manifest);
}

#[test]
fn changed_stage_config_reruns_only_downstream() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), TOY_CORPUS);
    run_with_config(&cfg, &RunOptions { force: false, stop_after: Some(Stage::Generate) }).unwrap();
    let run = run_dir(dir.path());
    assert!(!run.join("report.txt").exists());

    cfg.decoder.seed = 10;
    let summary = run_with_config(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(summary.skipped, vec![Stage::Ingest, Stage::Split, Stage::Tag, Stage::Train]);
    assert_eq!(summary.executed, vec![Stage::Generate, Stage::Evaluate]);
}

#[test]
fn missing_corpus_names_stage_and_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "no/such/corpus.txt");
    let err = run_with_config(&cfg, &RunOptions::default()).unwrap_err();
    assert_eq!(err.stage(), Some(Stage::Ingest));
    let message = err.to_string();
    assert!(message.contains("ingest"), "{message}");
    assert!(message.contains("no/such/corpus.txt"), "{message}");
}

#[test]
fn failed_stage_resumes_from_the_last_good_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), TOY_CORPUS);
    let run = run_dir(dir.path());
    std::fs::create_dir_all(run.join("model/model.ckpt")).unwrap();
    let err = run_with_config(&cfg, &RunOptions::default()).unwrap_err();
    assert_eq!(err.stage(), Some(Stage::Train));
    let partial = Manifest::load(&run).unwrap();
    let done: Vec<Stage> = partial.stages.iter().map(|s| s.stage).collect();
    assert_eq!(done, vec![Stage::Ingest, Stage::Split, Stage::Tag]);

    std::fs::remove_dir(run.join("model/model.ckpt")).unwrap();
    let resumed = run_with_config(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(resumed.skipped, vec![Stage::Ingest, Stage::Split, Stage::Tag]);
    assert_eq!(resumed.executed, vec![Stage::Train, Stage::Generate, Stage::Evaluate]);
}

#[test]
fn shipped_toy_config_parses() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml");
    let cfg = PipelineConfig::load(&path).unwrap();
    assert!(cfg.corpus.paths.iter().all(|p| p.is_file()), "{:?}", cfg.corpus.paths);
    assert!(run_pipeline(Path::new("/nonexistent/config.toml")).is_err());
}
