use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const CONFIG: &str = r#"
precision = "f64"

[data]
corpus = "data/corpus.txt"
heldout = "data/corpus.txt"
heldout_gold = "data/gold.trees"

[model.generator]
width = 16
type_layers = 1
token_layers = 1
heads = 2
ffn = 32
max_words = 32

[model.composition]
width = 16
layers = 1
heads = 2
ffn = 32
score_dim = 16
parser_layers = 1
max_len = 32

[training]
steps = 10
batch_tokens = 64
seed = 3

[schedule]
checkpoint_every = 5
eval_every = 5
"#;

fn gpst(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpst"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn ok(o: Output) -> Output {
    assert_eq!(code(&o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

/// A 100-sentence toy corpus and its config.
fn workspace() -> TempDir {
    let t = tempfile::tempdir().unwrap();
    ok(gpst(t.path(), &["synth", "--output-dir", "data", "--sentences", "100", "--max-len", "10", "--seed", "1"]));
    fs::write(t.path().join("run.toml"), CONFIG).unwrap();
    t
}

fn ckpt(dir: &Path, run: &str, step: u64) -> PathBuf {
    dir.join(run).join("checkpoints").join(format!("step-{step:08}.ckpt"))
}

#[test]
fn smoke_run_writes_the_run_directory() {
    let t = workspace();
    let d = t.path();
    ok(gpst(d, &["train", "--config", "run.toml", "--run-dir", "run"]));
    assert!(ckpt(d, "run", 10).is_file());
    assert!(ckpt(d, "run", 5).is_file());
    assert!(d.join("run/config.toml").is_file());
    assert!(d.join("run/vocab.txt").is_file());
    assert!(d.join("run/outputs/trees-step-00000010.txt").is_file());
    let log = fs::read_to_string(d.join("run/logs/train.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 10);
    assert_eq!(records[9]["step"], 10);
    assert!(records[4]["heldout_f1"].as_f64().is_some());
    // The snapshot alone reproduces the run.
    let snap = fs::read_to_string(d.join("run/config.toml")).unwrap();
    assert!(snap.contains("vocab_size"));
    assert!(snap.contains("seed = 3"));
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let t = workspace();
    let d = t.path();
    ok(gpst(d, &["train", "--config", "run.toml", "--run-dir", "full"]));
    ok(gpst(d, &["train", "--config", "run.toml", "--run-dir", "split", "--steps", "5"]));
    ok(gpst(d, &["train", "--run-dir", "split", "--resume", "--steps", "10"]));
    assert_eq!(fs::read(ckpt(d, "full", 10)).unwrap(), fs::read(ckpt(d, "split", 10)).unwrap());
    let log = fs::read_to_string(d.join("split/logs/train.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 10);
}

#[test]
fn seed_fixes_the_run() {
    let t = workspace();
    let d = t.path();
    for run in ["a", "b"] {
        ok(gpst(d, &["train", "--config", "run.toml", "--run-dir", run, "--steps", "3"]));
    }
    ok(gpst(d, &["train", "--config", "run.toml", "--run-dir", "c", "--steps", "3", "--seed", "4"]));
    let a = fs::read(ckpt(d, "a", 3)).unwrap();
    assert_eq!(a, fs::read(ckpt(d, "b", 3)).unwrap());
    assert_ne!(a, fs::read(ckpt(d, "c", 3)).unwrap());
}

#[test]
fn decoding_commands_write_their_outputs() {
    let t = workspace();
    let d = t.path();
    ok(gpst(d, &["train", "--config", "run.toml", "--run-dir", "run", "--steps", "4"]));
    for method in ["beam", "inside"] {
        let out = format!("{method}.trees");
        ok(gpst(d, &["parse", "--run-dir", "run", "--input", "data/corpus.txt", "--method", method, "--output", &out]));
        let o = ok(gpst(d, &["eval-f1", "--pred", &out, "--gold", "data/gold.trees"]));
        let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(r["sentences"], 100);
        let f = r["mean_f1"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&f));
    }
    let o = ok(gpst(d, &["generate", "--run-dir", "run", "--count", "3", "--sample", "4", "--max-words", "6"]));
    let lines: Vec<serde_json::Value> =
        String::from_utf8(o.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|g| g["logp"].as_f64().unwrap() < 0.0));

    fs::write(d.join("s.jsonl"), "{\"text\": \"the dog runs\", \"regions\": [[1, 2], [3, 3]]}\nthe dog runs\n").unwrap();
    let o = ok(gpst(d, &["surprisal", "--run-dir", "run", "--input", "s.jsonl", "--beam", "20"]));
    let recs: Vec<serde_json::Value> =
        String::from_utf8(o.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let bits = |r: &serde_json::Value, i: usize| r["regions"][i]["bits"].as_f64().unwrap();
    // Regions telescope: words 1-2 plus word 3 equal the per-word sum.
    let per_word: f64 = (0..3).map(|i| bits(&recs[1], i)).sum();
    assert!((bits(&recs[0], 0) + bits(&recs[0], 1) - per_word).abs() < 1e-9);
}

#[test]
fn eval_f1_of_gold_against_itself_is_one() {
    let t = workspace();
    let d = t.path();
    ok(gpst(d, &["eval-f1", "--pred", "data/gold.trees", "--gold", "data/gold.trees", "--output", "r.json"]));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(r["mean_f1"], 1.0);
    assert!(r["config"]["exclude_trivial"].as_bool().unwrap());
}

#[test]
fn gradcheck_passes() {
    let t = tempfile::tempdir().unwrap();
    let o = ok(gpst(t.path(), &["gradcheck", "--sentences", "1", "--coords", "20", "--output", "g.json"]));
    assert!(String::from_utf8_lossy(&o.stdout).contains("passed"));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(t.path().join("g.json")).unwrap()).unwrap();
    assert_eq!(r.as_array().unwrap().len(), 5);
}

#[test]
fn bench_reports_both_charts() {
    let t = tempfile::tempdir().unwrap();
    let o = ok(gpst(t.path(), &["bench", "--lengths", "16,32", "--reps", "1", "--width", "8"]));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["timings"].as_array().unwrap().len(), 2);
    assert!(r["full_exponent"].as_f64().is_some());
}

#[test]
fn usage_errors_exit_with_two() {
    let t = workspace();
    let d = t.path();
    assert_eq!(code(&gpst(d, &["train", "--run-dir", "r"])), 2);
    assert_eq!(code(&gpst(d, &["train", "--config", "missing.toml", "--run-dir", "r"])), 2);
    assert_eq!(code(&gpst(d, &["train", "--config", "run.toml", "--run-dir", "r", "--corpus", "nope.txt"])), 2);
    assert_eq!(code(&gpst(d, &["train", "--config", "run.toml", "--run-dir", "r", "--bogus"])), 2);
    assert_eq!(code(&gpst(d, &["train", "--config", "run.toml", "--run-dir", "r", "--lr", "-1"])), 2);
    assert_eq!(code(&gpst(d, &["parse", "--run-dir", "data", "--input", "data/corpus.txt"])), 2);
    assert_eq!(code(&gpst(d, &["eval-f1", "--pred", "nope", "--gold", "data/gold.trees"])), 2);
    assert!(!d.join("r").exists());
    ok(gpst(d, &["train", "--config", "run.toml", "--run-dir", "r", "--steps", "1"]));
    // An existing run is only continued on request.
    assert_eq!(code(&gpst(d, &["train", "--config", "run.toml", "--run-dir", "r"])), 2);
}

#[test]
fn runtime_failures_exit_with_one_and_leave_no_output() {
    let t = workspace();
    let d = t.path();
    fs::write(d.join("short.trees"), "(S (A a) (B b))\n").unwrap();
    let o = gpst(d, &["eval-f1", "--pred", "short.trees", "--gold", "data/gold.trees", "--output", "r.json"]);
    assert_eq!(code(&o), 1);
    assert!(!d.join("r.json").exists());
    fs::write(d.join("bad.trees"), "(S (A a) (B b)\n").unwrap();
    assert_eq!(code(&gpst(d, &["eval-f1", "--pred", "bad.trees", "--gold", "data/gold.trees"])), 1);
}
