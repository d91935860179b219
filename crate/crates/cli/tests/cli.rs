use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dcp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcp"))
        .args(args)
        .env_remove("DCP_SEED")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn corpus(dir: &Path, name: &str, n: usize) -> std::path::PathBuf {
    let path = dir.join(name);
    ok(&dcp(&["make-corpus", "--seed", "7", "--n", &n.to_string(), "--filler", "0.5", "--out", s(&path)]));
    path
}

#[test]
fn make_corpus_counts_and_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let a = corpus(dir.path(), "a.jsonl", 500);
    let b = corpus(dir.path(), "b.jsonl", 500);
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 500);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "make-corpus");
    assert_eq!(manifest["seed"], 7);
    assert!(!dir.path().join("a.jsonl.partial").exists());
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let flag = corpus(dir.path(), "flag.jsonl", 5);
    let env = dir.path().join("env.jsonl");
    let out = Command::new(env!("CARGO_BIN_EXE_dcp"))
        .args(["make-corpus", "--n", "5", "--out", s(&env)])
        .env("DCP_SEED", "7")
        .output()
        .unwrap();
    ok(&out);
    assert_eq!(fs::read(flag).unwrap(), fs::read(env).unwrap());
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.jsonl");
    assert_eq!(dcp(&["make-corpus", "--filler", "1.5", "--out", s(&out)]).status.code(), Some(2));
    assert!(!out.exists());

    let c = corpus(dir.path(), "c.jsonl", 5);
    let bad = dcp(&["eval", "--corpus", s(&c), "--methods", "random,nope", "--out-dir", s(dir.path())]);
    assert_eq!(bad.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&bad.stderr);
    assert!(msg.contains("selfinfo") && msg.contains("policy"), "{msg}");

    let run = dir.path().join("run");
    let conflict = dcp(&[
        "train", "--corpus", s(&c), "--out-dir", s(&run), "--psi", "0.05", "--set", "curriculum.psi=0.1",
    ]);
    assert_eq!(conflict.status.code(), Some(2));
    assert!(!run.join("checkpoint.bin").exists());
    let invalid = dcp(&["train", "--corpus", s(&c), "--out-dir", s(&run), "--set", "trainer.clip_eps=2"]);
    assert_eq!(invalid.status.code(), Some(2));
}

#[test]
fn bad_checkpoint_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), "c.jsonl", 3);
    let ckpt = dir.path().join("bogus.bin");
    let mut bytes = b"DCPCKPT\0".to_vec();
    bytes.extend_from_slice(&99u32.to_le_bytes());
    fs::write(&ckpt, bytes).unwrap();
    let out = dcp(&["compress", "--checkpoint", s(&ckpt), "--input", s(&c), "--out", s(&dir.path().join("o.jsonl"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));
}

#[test]
fn eval_sections_and_identity() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), "c.jsonl", 20);
    let out = dir.path().join("ev");
    ok(&dcp(&["eval", "--corpus", s(&c), "--methods", "identity,random,selfinfo", "--rho", "0.5", "--out-dir", s(&out)]));
    let table = fs::read_to_string(out.join("table.txt")).unwrap();
    for m in ["identity", "random", "selfinfo"] {
        assert!(table.lines().any(|l| l.starts_with(m)), "{table}");
    }
    for row in jsonl(&out.join("eval_identity.jsonl")) {
        for k in ["rouge1", "rouge2", "rouge_l", "token_f1"] {
            assert_eq!(row[k], 1.0);
        }
    }
    // The table's F1 column is the mean of the per-row values.
    let rows = jsonl(&out.join("eval_random.jsonl"));
    assert_eq!(rows.len(), 20);
    let mean = rows.iter().map(|r| r["token_f1"].as_f64().unwrap()).sum::<f64>() / rows.len() as f64;
    let line = table.lines().find(|l| l.starts_with("random")).unwrap();
    let f1: f64 = line.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!((f1 - 100.0 * mean).abs() < 0.006, "{f1} vs {mean}");
    let inv: f64 = line.split_whitespace().last().unwrap().trim_end_matches('x').parse().unwrap();
    assert!((inv - 2.0).abs() < 0.2);
}

fn small_train(dir: &Path, name: &str, extra: &[&str]) -> std::path::PathBuf {
    let c = corpus(dir, "small.jsonl", 12);
    let run = dir.join(name);
    let mut args = vec!["train", "--corpus", s(&c), "--out-dir", s(&run), "--seed", "3"];
    args.extend_from_slice(extra);
    ok(&dcp(&args));
    run
}

#[test]
fn no_hpc_holds_bounds_and_runs_repeat() {
    let dir = tempfile::tempdir().unwrap();
    let run = small_train(dir.path(), "flat", &["--no-hpc"]);
    let log = jsonl(&run.join("training_log.jsonl"));
    assert!(log.iter().map(|r| r["stage"].as_u64().unwrap()).max() == Some(3));
    for rec in &log {
        for b in rec["bounds"].as_array().unwrap() {
            assert!((b[0].as_f64().unwrap() - 0.5).abs() < 1e-12 && (b[1].as_f64().unwrap() - 0.9).abs() < 1e-12);
        }
    }
    let again = small_train(dir.path(), "flat2", &["--no-hpc"]);
    assert_eq!(
        fs::read(run.join("training_log.jsonl")).unwrap(),
        fs::read(again.join("training_log.jsonl")).unwrap()
    );
    let manifest: Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["curriculum"]["hierarchical"], false);
    assert_eq!(manifest["config"]["trainer"]["seed"], 3);
}

#[test]
fn default_train_then_compress_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), "c.jsonl", 500);
    let run = dir.path().join("run");
    ok(&dcp(&["train", "--corpus", s(&c), "--out-dir", s(&run)]));
    for f in ["checkpoint.bin", "training_log.jsonl", "manifest.json", "lm.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    assert!(fs::read_dir(&run).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".partial")));
    let ckpt = run.join("checkpoint.bin");

    let compress = |k: &str, name: &str| {
        let out = dir.path().join(name);
        ok(&dcp(&["compress", "--checkpoint", s(&ckpt), "--input", s(&c), "--out", s(&out), "--steps", k]));
        jsonl(&out)
    };
    let k0 = compress("0", "k0.jsonl");
    let k1 = compress("1", "k1.jsonl");
    let k3 = compress("3", "k3.jsonl");
    assert_eq!(k0.len(), 500);
    for ((a, b), d) in k0.iter().zip(&k1).zip(&k3) {
        assert_eq!(a["compressed"], a["original"]);
        assert_eq!(a["rho"], 1.0);
        assert!(b["rho"].as_f64().unwrap() >= d["rho"].as_f64().unwrap());
        for r in [a, b, d] {
            let after = r["compressed"].as_str().unwrap().split_whitespace().count();
            let before = r["original"].as_str().unwrap().split_whitespace().count();
            assert_eq!(after as u64, r["tokens_after"].as_u64().unwrap());
            assert!((r["rho"].as_f64().unwrap() - after as f64 / before as f64).abs() < 1e-12);
        }
    }

    let ev = dir.path().join("ev");
    ok(&dcp(&[
        "eval", "--corpus", s(&c), "--methods", "policy,random", "--checkpoint", s(&ckpt), "--lm",
        s(&run.join("lm.json")), "--out-dir", s(&ev),
    ]));
    assert_eq!(jsonl(&ev.join("eval_policy.jsonl")).len(), 500);
}
