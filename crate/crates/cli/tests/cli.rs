use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

fn ragmark(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ragmark"))
        .current_dir(dir)
        .env_remove("RAGMARK_CONFIG")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = ragmark(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn prepare(dir: &Path) {
    let data = data_dir();
    ok(
        dir,
        &[
            "ingest",
            "--input",
            data.to_str().unwrap(),
            "--paragraphs-out",
            "p.jsonl",
            "--sentences-out",
            "s.jsonl",
        ],
    );
    ok(
        dir,
        &["qa-gen", "--paragraphs", "p.jsonl", "--train-out", "train.jsonl", "--validation-out", "val.jsonl"],
    );
    ok(dir, &["index", "--kind", "sentences", "--input", "s.jsonl", "--out", "idx_s.jsonl"]);
    ok(dir, &["index", "--kind", "questions", "--input", "train.jsonl", "--out", "idx_q.jsonl"]);
    ok(dir, &["testgen", "--index", "idx_s.jsonl", "--out", "test.jsonl", "--qg-endpoint", "mock:99"]);
}

const SWEEP: [&str; 9] = [
    "sweep",
    "--testset",
    "test.jsonl",
    "--index-sentences",
    "idx_s.jsonl",
    "--index-questions",
    "idx_q.jsonl",
    "--out",
    "report",
];

#[test]
fn full_pipeline_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare(dir);
    ok(dir, &SWEEP);
    let report = dir.join("report");
    for name in ["report.csv", "report.json", "radar.json", "radar.svg", "scores.csv"] {
        assert!(report.join(name).is_file(), "{name} missing");
    }
    let first = std::fs::read(report.join("report.csv")).unwrap();
    let csv = String::from_utf8(first.clone()).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("arm,baseline,")));
    assert!(csv.lines().any(|l| l.contains("rag-ID_s")));
    assert!(csv.lines().any(|l| l.contains("rag-ID_q")));

    ok(dir, &SWEEP);
    assert_eq!(std::fs::read(report.join("report.csv")).unwrap(), first);

    ok(dir, &["report", "--scores", "report/scores.csv", "--out", "rebuilt"]);
    assert_eq!(std::fs::read(dir.join("rebuilt/report.csv")).unwrap(), first);
    assert_eq!(
        std::fs::read(dir.join("rebuilt/report.json")).unwrap(),
        std::fs::read(report.join("report.json")).unwrap()
    );
}

#[test]
fn ask_prints_json_answer() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare(dir);
    let out = ok(
        dir,
        &["ask", "--question", "What about the telescope and the planet?", "--index", "idx_s.jsonl", "--json"],
    );
    let value: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(value.is_object());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(ragmark(dir, &["no-such-command"]).status.code(), Some(1));
    assert_eq!(ragmark(dir, &["--help"]).status.code(), Some(0));
    assert_eq!(ragmark(dir, &["config", "--set", "bogus.key=1", "--list"]).status.code(), Some(1));
    assert_eq!(
        ragmark(dir, &["report", "--scores", "missing.csv", "--out", "r"]).status.code(),
        Some(3)
    );

    prepare(dir);
    // Nothing listens on port 9, so every request fails and the run aborts.
    let mut args = SWEEP.to_vec();
    args.extend(["--endpoint", "http://127.0.0.1:9", "--set", "gen.retries=0"]);
    let out = ragmark(dir, &args);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn dry_run_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare(dir);
    let before: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name()).collect();
    let mut args = SWEEP.to_vec();
    args.push("--dry-run");
    let plan = ok(dir, &args);
    assert!(!plan.is_empty());
    assert!(!dir.join("report").exists());
    let after: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(before.len(), after.len());
}

#[test]
fn config_list_and_env_file() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let listing = ok(dir, &["config", "--list"]);
    for key in ["retrieve.threshold", "embed.endpoint", "gen.endpoint", "testgen.min_pts", "experiment.thresholds"] {
        assert!(listing.contains(key), "{key} not listed");
    }

    std::fs::write(dir.join("ragmark.conf"), "retrieve.threshold = 0.7\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ragmark"))
        .current_dir(dir)
        .env("RAGMARK_CONFIG", dir.join("ragmark.conf"))
        .args(["config", "--list"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let line = text.lines().find(|l| l.contains("retrieve.threshold")).unwrap();
    assert!(line.contains("0.7"), "{line}");

    // Flags win over the file.
    let flagged = ok(
        dir,
        &["--config", "ragmark.conf", "--set", "retrieve.threshold=0.2", "config", "--list"],
    );
    let line = flagged.lines().find(|l| l.contains("retrieve.threshold")).unwrap();
    assert!(line.contains("0.2"), "{line}");
}
