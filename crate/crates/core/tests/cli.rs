use std::path::Path;
use std::process::Command;

use ctxbert::cli::{run, RunManifest};

fn ctxbert(args: &[&str]) -> (u8, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("ctxbert").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn ok(args: &[&str]) -> String {
    let (code, out, err) = ctxbert(args);
    assert_eq!(code, 0, "{args:?}: {err}");
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a small split corpus and returns (train, val) paths.
fn small_corpus(dir: &Path) -> (String, String) {
    ok(&[
        "generate-data",
        "--seed",
        "3",
        "--val-fraction",
        "0.2",
        "--set",
        "generator.n_outfits=300",
        "--out",
        path(dir),
    ]);
    (
        path(&dir.join("train.jsonl")).to_string(),
        path(&dir.join("val.jsonl")).to_string(),
    )
}

#[test]
fn count_params_prints_paper_counts() {
    assert_eq!(
        ok(&["count-params", "--preset", "paper", "--method", "gsu"]),
        "921856\n"
    );
    assert_eq!(
        ok(&["count-params", "--preset", "paper", "--method", "none"]),
        "546432\n"
    );
    let table = ok(&["count-params", "--preset", "paper"]);
    let counts: Vec<&str> = table
        .lines()
        .map(|l| l.split_whitespace().last().unwrap())
        .collect();
    assert_eq!(counts, ["546432", "673664", "640768", "723328", "921856"]);
}

#[test]
fn generate_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run_once = |name: &str| {
        let out = ok(&[
            "generate-data",
            "--seed",
            "7",
            "--set",
            "generator.n_outfits=2000",
            "--out",
            path(&dir.path().join(name)),
        ]);
        out.split("sha256 ").nth(1).unwrap().trim().to_string()
    };
    let a = run_once("a");
    assert_eq!(a.len(), 64);
    assert_eq!(a, run_once("b"));
    let ba = std::fs::read(dir.path().join("a/corpus.jsonl")).unwrap();
    let bb = std::fs::read(dir.path().join("b/corpus.jsonl")).unwrap();
    assert!(ba == bb);
}

#[test]
fn bad_flags_exit_with_usage() {
    let (code, _, err) = ctxbert(&["count-params", "--frobnicate"]);
    assert_eq!(code, 2);
    assert!(err.contains("Usage"), "{err}");
    let (code, _, _) = ctxbert(&["launch-rockets"]);
    assert_eq!(code, 2);
    let (code, _, err) = ctxbert(&["count-params", "--set", "model.nope=1"]);
    assert_eq!(code, 2);
    assert!(err.contains("nope"), "{err}");
}

#[test]
fn validation_failure_is_one_json_line() {
    let (code, out, err) = ctxbert(&["count-params", "--set", "model.n_heads=5"]);
    assert_eq!(code, 1);
    assert!(out.is_empty());
    assert_eq!(err.lines().count(), 1, "{err}");
    let v: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(v["error"], "config");
    assert!(v["message"].as_str().unwrap().contains("head"), "{v}");
}

#[test]
fn train_requires_a_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = ctxbert(&["train", "--out", path(dir.path())]);
    assert_eq!(code, 1, "{err}");
    assert!(err.contains("--train"), "{err}");
}

#[test]
fn manifest_replays_a_training_run_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (train, val) = small_corpus(&dir.path().join("data"));
    let first = dir.path().join("first");
    let out = ok(&[
        "train",
        "--method",
        "gsu",
        "--seed",
        "4",
        "--train",
        &train,
        "--val",
        &val,
        "--set",
        "epochs=2",
        "--set",
        "batch_size=32",
        "--out",
        path(&first),
    ]);
    let summary: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(summary["method"], "gsu");
    let manifest = RunManifest::load(&first.join("manifest.json")).unwrap();
    assert_eq!(manifest.command, "train");
    assert_eq!(manifest.seeds, [4]);
    assert_eq!(manifest.config["epochs"], 2);
    assert!(manifest.timings.elapsed_seconds.is_some());
    assert!(!manifest.version.is_empty());

    let second = dir.path().join("second");
    ok(&[
        "train",
        "--config",
        path(&first.join("manifest.json")),
        "--out",
        path(&second),
    ]);
    for file in ["model.ckpt", "metrics.jsonl"] {
        let a = std::fs::read(first.join(file)).unwrap();
        let b = std::fs::read(second.join(file)).unwrap();
        assert!(a == b, "{file} differs");
    }

    let report = ok(&[
        "eval",
        "--checkpoint",
        path(&first.join("model.ckpt")),
        "--data",
        &val,
        "--seed",
        "4",
    ]);
    let report: serde_json::Value = serde_json::from_str(report.trim()).unwrap();
    assert_eq!(report["method"], "gsu");
    assert_eq!(
        report["cross_entropy"]["mean"],
        summary["validation"]["cross_entropy"]
    );
    assert!(report["cross_entropy"]["stderr"].is_null());
}

#[test]
fn manifest_exists_when_a_run_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = small_corpus(&dir.path().join("data"));
    let run_dir = dir.path().join("run");
    let (code, _, err) = ctxbert(&[
        "train",
        "--train",
        &train,
        "--set",
        "adam.learning_rate=1e30",
        "--set",
        "batch_size=8",
        "--out",
        path(&run_dir),
    ]);
    assert_eq!(code, 1);
    let v: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(v["error"], "non_finite");
    let manifest = RunManifest::load(&run_dir.join("manifest.json")).unwrap();
    assert!(manifest.timings.finished_unix.is_none());
    assert!(run_dir.join("last-good.ckpt").exists());
}

#[test]
fn bayes_eval_beats_context_free_bayes() {
    let dir = tempfile::tempdir().unwrap();
    let (_, val) = small_corpus(dir.path());
    let ce = |extra: &[&str]| {
        let mut args = vec!["eval", "--bayes", "--data", val.as_str()];
        args.extend_from_slice(extra);
        let v: serde_json::Value = serde_json::from_str(ok(&args).trim()).unwrap();
        v["metrics"]["cross_entropy"].as_f64().unwrap()
    };
    assert!(ce(&[]) < ce(&["--no-context"]));
}

#[test]
fn compare_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let (train, val) = small_corpus(&dir.path().join("data"));
    let out_dir = dir.path().join("cmp");
    let table = ok(&[
        "compare",
        "--train",
        &train,
        "--val",
        &val,
        "--methods",
        "none,np",
        "--seeds",
        "1,2",
        "--set",
        "base.epochs=1",
        "--out",
        path(&out_dir),
    ]);
    assert!(table.starts_with("Method"), "{table}");
    assert!(table.contains("[NP]"), "{table}");
    assert_eq!(
        std::fs::read_to_string(out_dir.join("comparison.txt")).unwrap(),
        table
    );
    for run in ["none/seed-1", "none/seed-2", "np/seed-1", "np/seed-2"] {
        assert!(out_dir.join(run).join("model.ckpt").exists(), "{run}");
    }
    let manifest = RunManifest::load(&out_dir.join("manifest.json")).unwrap();
    assert_eq!(manifest.seeds, [1, 2]);
}

#[test]
fn grad_check_passes() {
    let out = ok(&["grad-check", "--per-tensor", "2"]);
    assert_eq!(out.lines().count(), 16, "{out}");
    assert!(out.lines().all(|l| l.starts_with("ok\t")), "{out}");
}

#[test]
fn binary_exit_codes_and_thread_variable() {
    let bin = env!("CARGO_BIN_EXE_ctxbert");
    let status = Command::new(bin)
        .args(["count-params", "--preset", "paper"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0));
    let status = Command::new(bin).arg("--nope").output().unwrap();
    assert_eq!(status.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = Command::new(bin)
        .args(["generate-data", "--out", path(dir.path())])
        .env("CTXBERT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
    let line = String::from_utf8(bad.stderr).unwrap();
    assert!(line.contains("CTXBERT_THREADS"), "{line}");
    let good = Command::new(bin)
        .args([
            "generate-data",
            "--set",
            "generator.n_outfits=100",
            "--out",
            path(dir.path()),
        ])
        .env("CTXBERT_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(good.status.code(), Some(0));
}
