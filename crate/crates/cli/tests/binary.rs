mod common;

use std::process::{Command, Output};

fn mulm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mulm")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn param_count_table() {
    let out = mulm(&["param-count"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for size in ["8.79M", "14.43M", "17.11M", "29.50M", "28.85M"] {
        assert!(text.contains(size), "{text}");
    }
    let out = mulm(&["param-count", "--d", "512", "--layers", "8", "--json"]);
    let rows: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().last().unwrap()["params"], 28_844_544);
}

#[test]
fn exit_codes() {
    assert_eq!(mulm(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(mulm(&["param-count", "--d", "0", "--layers", "2"]).status.code(), Some(2));
    assert_eq!(mulm(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.mulm");
    let out = mulm(&[
        "serve",
        "--weights",
        missing.to_str().unwrap(),
        "--tokenizer",
        missing.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.mulm"));
}

#[test]
fn train_init_and_chat_offline() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.txt");
    std::fs::write(&corpus, common::CORPUS.repeat(4)).unwrap();
    let tok = dir.path().join("tok.json");
    let weights = dir.path().join("w.mulm");
    let out = mulm(&["tokenizer-train", "--input", corpus.to_str().unwrap(), "--vocab-size", "300", "--out", tok.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = mulm(&[
        "init-model",
        "--tokenizer",
        tok.to_str().unwrap(),
        "--d",
        "32",
        "--layers",
        "2",
        "--heads",
        "4",
        "--kv-heads",
        "2",
        "--max-seq",
        "128",
        "--out",
        weights.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let mut child = Command::new(env!("CARGO_BIN_EXE_mulm"))
        .args(["chat", "--no-cloud", "--weights", weights.to_str().unwrap(), "--tokenizer", tok.to_str().unwrap(), "--max-tokens", "8"])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    use std::io::Write;
    child.stdin.take().unwrap().write_all(b"hello there\n/quit\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    assert_eq!(stdout(&out).lines().count(), 1);
}

#[test]
fn dedup_flags_planted_copies() {
    let dir = tempfile::tempdir().unwrap();
    let eval = dir.path().join("eval.jsonl");
    let train = dir.path().join("train.jsonl");
    let prompt = "the quick brown fox jumps over the lazy dog near the quiet river bank today";
    std::fs::write(
        &eval,
        format!(
            "{}\n{}\n",
            serde_json::json!({"id": "e1", "text": prompt}),
            serde_json::json!({"id": "e2", "text": "an entirely different question about orbital mechanics and comets"})
        ),
    )
    .unwrap();
    std::fs::write(
        &train,
        format!(
            "{}\n{}\n",
            serde_json::json!({"id": "t1", "text": format!("Preface. {prompt} Afterword.")}),
            serde_json::json!({"id": "t2", "text": "cooking pasta requires salted boiling water and patience"})
        ),
    )
    .unwrap();
    let out = mulm(&["dedup", "--eval", eval.to_str().unwrap(), "--train", train.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let flags: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let flags = flags.as_array().unwrap();
    assert_eq!(flags.len(), 1);
    assert_eq!(flags[0]["eval_id"], "e1");
    assert_eq!(flags[0]["train_id"], "t1");
}
