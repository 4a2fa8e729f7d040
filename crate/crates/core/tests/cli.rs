use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CORPUS: &str = "talo on iso\nkissa istuu talossa\nkoira juoksee pihalla\nme asumme talossa\n";
const SMALL: [&str; 12] = [
    "--d-c", "4", "--d-wi", "5", "--d-w", "6", "--d-l", "7", "--decoder-hidden", "8", "--max-word-len", "10",
];

fn c2w2c(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_c2w2c")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn train(dir: &Path, extra: &[&str]) -> Output {
    let corpus = dir.join("train.txt");
    fs::write(&corpus, CORPUS).unwrap();
    let ck = dir.join("model.ck");
    let mut args = vec![
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--checkpoint",
        ck.to_str().unwrap(),
        "--epochs",
        "2",
        "--batch-size",
        "2",
        "--deterministic",
    ];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    c2w2c(&args)
}

#[test]
fn params_prints_both_models() {
    let out = stdout(&c2w2c(&["params"]));
    assert!(out.lines().next().unwrap().starts_with("model\tinput\tlm\toutput\ttotal"));
    assert!(out.contains("c2w2c\t261250\t3104000\t1940150\t5305400"));
    assert!(out.contains("wordlstm\t"));
}

#[test]
fn params_rejects_empty_vocab() {
    let o = c2w2c(&["params", "--char-vocab-size", "0"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn missing_corpus_fails() {
    let o = c2w2c(&["train", "--corpus", "/nonexistent/corpus.txt", "--checkpoint", "/tmp/never.ck"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/corpus.txt"));
}

#[test]
fn build_vocab_writes_file_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.txt");
    fs::write(&corpus, CORPUS).unwrap();
    let vocab = dir.path().join("v.txt");
    let out = stdout(&c2w2c(&["build-vocab", "--corpus", corpus.to_str().unwrap(), "--vocab", vocab.to_str().unwrap()]));
    assert!(vocab.exists());
    assert!(out.contains("tokens"), "{out}");
}

#[test]
fn train_then_score_eval_sample() {
    let dir = tempfile::tempdir().unwrap();
    let log = stdout(&train(dir.path(), &[]));
    assert_eq!(log.lines().count(), 2, "one line per epoch: {log}");
    let ck = dir.path().join("model.ck");
    let ck = ck.to_str().unwrap();
    let input = dir.path().join("in.txt");
    fs::write(&input, "talo on iso\nkissa on talossa\n").unwrap();
    let input = input.to_str().unwrap();

    let scores = stdout(&c2w2c(&["score", "--checkpoint", ck, "--input", input]));
    assert_eq!(scores.lines().count(), 2);

    let eval = stdout(&c2w2c(&["eval", "--checkpoint", ck, "--input", input]));
    let ppl: f64 = eval
        .lines()
        .find_map(|l| l.strip_prefix("perplexity"))
        .map(|v| v.trim_start_matches([':', '\t', ' ']).parse().unwrap())
        .expect(&eval);
    assert!(ppl.is_finite() && ppl > 1.0);

    let greedy = stdout(&c2w2c(&["sample", "--checkpoint", ck, "--context", "talo", "--max-words", "3"]));
    assert_eq!(greedy.lines().count(), 1);
    let beam = stdout(&c2w2c(&[
        "sample", "--checkpoint", ck, "--context", "talo", "--strategy", "beam", "--word-k", "3", "--sentence-k", "2",
        "--max-words", "3",
    ]));
    assert!((1..=2).contains(&beam.lines().count()), "{beam}");
}

#[test]
fn empty_eval_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    stdout(&train(dir.path(), &[]));
    let empty = dir.path().join("empty.txt");
    fs::write(&empty, "\n\n").unwrap();
    let ck = dir.path().join("model.ck");
    let o = c2w2c(&["eval", "--checkpoint", ck.to_str().unwrap(), "--input", empty.to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn unknown_characters_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    stdout(&train(dir.path(), &[]));
    let ck = dir.path().join("model.ck");
    let o = c2w2c(&["sample", "--checkpoint", ck.to_str().unwrap(), "--context", "xyzzy"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("xyzzy"));
}

#[test]
fn manifest_reproduces_the_run() {
    let a = tempfile::tempdir().unwrap();
    stdout(&train(a.path(), &["--seed", "9"]));
    let manifest = a.path().join("model.ck.run.toml");
    let text = fs::read_to_string(&manifest).unwrap();
    assert!(text.contains("[run]") && text.contains("seed = 9"), "{text}");

    let b = tempfile::tempdir().unwrap();
    let ck = b.path().join("again.ck");
    stdout(&c2w2c(&["train", "--config", manifest.to_str().unwrap(), "--checkpoint", ck.to_str().unwrap()]));
    assert_eq!(fs::read(a.path().join("model.ck")).unwrap(), fs::read(&ck).unwrap());
}

#[test]
fn resume_continues_to_the_same_checkpoint() {
    let full = tempfile::tempdir().unwrap();
    stdout(&train(full.path(), &[]));

    let part = tempfile::tempdir().unwrap();
    stdout(&train(part.path(), &["--max-steps", "3"]));
    stdout(&train(part.path(), &["--resume"]));
    assert_eq!(fs::read(full.path().join("model.ck")).unwrap(), fs::read(part.path().join("model.ck")).unwrap());
}
