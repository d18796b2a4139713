use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use ctrlgen::toy::ANIMALS;
use serde_json::Value;

const SMALL_MODEL: &str =
    "--layers 1 --heads 2 --width 16 --ff-width 32 --dropout 0 --max-positions 32 --epochs 2 --batch-size 16 --lr 0.003 --seed 3";

fn ctrlgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctrlgen")).args(args).env("RUST_LOG", "warn").output().expect("spawn ctrlgen")
}

fn ok(args: &[&str]) -> String {
    let out = ctrlgen(args);
    assert!(out.status.success(), "ctrlgen {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_corpus(dir: &Path, n: usize) -> PathBuf {
    let path = dir.join("corpus.txt");
    std::fs::write(&path, ANIMALS.sample(n, 5).join("\n") + "\n").unwrap();
    path
}

fn count_lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().filter(|l| !l.trim().is_empty()).count()
}

/// Runs ingest through tagging and training on a small corpus; returns the
/// checkpoint and tagged test path.
fn small_model(dir: &Path) -> (PathBuf, PathBuf) {
    let corpus = write_corpus(dir, 300);
    let pairs = dir.join("pairs.jsonl");
    let splits = dir.join("splits");
    ok(&["ingest", "--in", s(&corpus), "--out", s(&pairs), "--source", "toy"]);
    ok(&["split", "--in", s(&pairs), "--out-dir", s(&splits), "--test-per-stratum", "10", "--seed", "1"]);
    let tagged_train = dir.join("train.tagged.jsonl");
    let tagged_test = dir.join("test.tagged.jsonl");
    ok(&["tag", "--in", s(&splits.join("train.jsonl")), "--out", s(&tagged_train), "--cefr", "--roles"]);
    ok(&["tag", "--in", s(&splits.join("test_high.jsonl")), "--out", s(&tagged_test), "--cefr", "--roles"]);
    let ckpt = dir.join("model.ckpt");
    let mut args = vec!["train", "--train", tagged_train.to_str().unwrap(), "--out", ckpt.to_str().unwrap()];
    args.extend(SMALL_MODEL.split_whitespace());
    ok(&args);
    (ckpt, tagged_test)
}

#[test]
fn offline_commands_chain_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (ckpt, tagged_test) = small_model(d);

    let splits = d.join("splits");
    let sizes: Vec<usize> =
        ["train", "validation", "test_high", "test_low"].iter().map(|n| count_lines(&splits.join(format!("{n}.jsonl")))).collect();
    assert_eq!(sizes[2], 10);
    assert_eq!(sizes[3], 10);
    assert_eq!(sizes.iter().sum::<usize>(), count_lines(&d.join("pairs.jsonl")));

    let first: Value = serde_json::from_str(std::fs::read_to_string(&tagged_test).unwrap().lines().next().unwrap()).unwrap();
    assert!(first["input"]["cefr"].is_string());
    assert!(first["input"]["roles"].is_object());

    let out = ok(&["generate", "--model", s(&ckpt), "--control", "<CEFR:A1>", "--concepts", "dog|ARG0,chase|V,cat|ARG1", "--k", "1"]);
    assert_eq!(out.lines().count(), 1);
    let again = ok(&["generate", "--model", s(&ckpt), "--control", "<CEFR:A1>", "--concepts", "dog|ARG0,chase|V,cat|ARG1", "--k", "1"]);
    assert_eq!(out, again);
    let three = ok(&["generate", "--model", s(&ckpt), "--concepts", "dog,cat", "--k", "5", "--n", "3", "--json"]);
    for line in three.lines() {
        let g: Value = serde_json::from_str(line).unwrap();
        assert!(g["text"].is_string() && g["logProb"].is_number());
    }
    assert_eq!(three.lines().count(), 3);

    let batch = d.join("gen.jsonl");
    ok(&["generate-batch", "--model", s(&ckpt), "--in", s(&tagged_test), "--out", s(&batch), "--tag", "small", "--k", "5"]);
    assert_eq!(count_lines(&batch), 10);

    let lm = d.join("trigram.lm");
    let idf = d.join("table.idf");
    ok(&["build-lm", "--in", s(&splits.join("train.jsonl")), "--out", s(&lm)]);
    ok(&["build-tfidf", "--in", s(&d.join("corpus.txt")), "--out", s(&idf)]);
    let report_json = d.join("report.json");
    let table = ok(&["evaluate", "--batch", s(&batch), "--scorer", s(&lm), "--tfidf", s(&idf), "--json", s(&report_json)]);
    assert!(table.contains("Cov(All)"), "{table}");
    assert!(table.contains("small"), "{table}");
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&report_json).unwrap()).unwrap();
    assert_eq!(report[0]["modelTag"], "small");
    assert_eq!(report[0]["records"], 10);
    assert!(report[0]["perplexity"].as_f64().unwrap() > 1.0);
}

#[test]
fn bad_inputs_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let out = ctrlgen(&["split", "--in", s(&missing), "--out-dir", s(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.jsonl"));

    let out = ctrlgen(&["tag", "--in", s(&missing), "--out", s(&missing)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nothing to tag"));

    let bad_ckpt = dir.path().join("bad.ckpt");
    std::fs::write(&bad_ckpt, b"not a checkpoint").unwrap();
    let out = ctrlgen(&["generate", "--model", s(&bad_ckpt), "--concepts", "dog,cat"]);
    assert!(!out.status.success());
}

#[test]
fn pipeline_run_then_resume() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_corpus(d, 200);
    let config = d.join("run.toml");
    std::fs::write(
        &config,
        r#"runDir = "run"
modelTag = "cli"

[corpus]
paths = ["corpus.txt"]

[split]
testPerStratum = 5
seed = 2

[model]
layers = 1
attentionHeads = 2
modelWidth = 16
feedForwardWidth = 32
dropoutRate = 0.0
maxPositions = 32

[training]
epochs = 1
batchSize = 16
learningRate = 0.003

[decoder]
k = 3
maxLength = 20

[evaluate]
maxItems = 3
"#,
    )
    .unwrap();
    let first = ok(&["pipeline", "run", s(&config)]);
    assert!(first.contains("evaluate: done"), "{first}");
    assert!(d.join("run/report.txt").exists());
    let second = ok(&["pipeline", "run", s(&config)]);
    assert!(!second.contains(": done"), "{second}");
    assert_eq!(second.matches("up to date").count(), 6);
    let partial = ok(&["pipeline", "run", s(&config), "--force", "--stop-after", "split"]);
    assert!(partial.contains("split: done") && !partial.contains("tag"), "{partial}");
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn http(port: u16, method: &str, path: &str, body: Option<&str>) -> (u16, String) {
    let mut stream = TcpStream::connect(("127.0.0.1", port)).unwrap();
    let body = body.unwrap_or("");
    write!(stream, "{method} {path} HTTP/1.1\r\nHost: localhost\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}", body.len()).unwrap();
    let mut raw = String::new();
    stream.read_to_string(&mut raw).unwrap();
    let (head, rest) = raw.split_once("\r\n\r\n").unwrap();
    let code = head.split_whitespace().nth(1).unwrap().parse().unwrap();
    (code, rest.to_string())
}

#[test]
fn serve_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (ckpt, _) = small_model(d);
    let store = d.join("items.log");
    let port = free_port();
    let child = Command::new(env!("CARGO_BIN_EXE_ctrlgen"))
        .args(["serve", "--port", &port.to_string(), "--model", s(&ckpt), "--store", s(&store), "--k", "5"])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let _server = Server(child);
    let deadline = Instant::now() + Duration::from_secs(60);
    while TcpStream::connect(("127.0.0.1", port)).is_err() {
        assert!(Instant::now() < deadline, "server did not start");
        std::thread::sleep(Duration::from_millis(100));
    }

    let (code, body) = http(port, "POST", "/generate", Some(r#"{"concepts":["dog","chase","cat"],"cefr":"A1"}"#));
    assert_eq!(code, 200, "{body}");
    let created: Value = serde_json::from_str(&body).unwrap();
    let id = created["itemId"].as_str().unwrap().to_string();
    assert_eq!(created["candidates"].as_array().unwrap().len(), 3);

    let (code, body) = http(port, "POST", "/generate", Some(r#"{"concepts":["dog"]}"#));
    assert_eq!(code, 400, "{body}");

    let review = r#"{"reviewerId":"r1","grammaticality":4,"complexity":2,"plausibility":4}"#;
    let (code, body) = http(port, "POST", &format!("/items/{id}/review"), Some(review));
    assert_eq!(code, 200, "{body}");
    let (code, _) = http(port, "POST", &format!("/items/{id}/status"), Some(r#"{"status":"ACCEPTED"}"#));
    assert_eq!(code, 200);
    let (code, body) = http(port, "GET", "/items?status=ACCEPTED", None);
    assert_eq!(code, 200);
    let listed: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(listed["items"].as_array().unwrap().len(), 1);
    drop(_server);

    let out = d.join("accepted.jsonl");
    let msg = ok(&["export", "--store", s(&store), "--out", s(&out)]);
    assert!(msg.contains("exported 1"), "{msg}");
    let pair: Value = serde_json::from_str(std::fs::read_to_string(&out).unwrap().trim()).unwrap();
    assert_eq!(pair["source"], format!("curation:{id}"));
}
