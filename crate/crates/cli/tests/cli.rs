use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use revprompt_core::optimizer::{RunResult, StopReason};
use revprompt_core::providers::mock::render_png;

const MOCK: &str = "run:\n  width: 16\n  height: 16\n  initial_prompt: dog\nevaluation:\n  seeds: [0, 1]\n";

fn revprompt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_revprompt"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("mock.yaml"), MOCK).unwrap();
    fs::write(dir.path().join("ref.png"), render_png(&["cat", "blue", "bow", "tie"], 16, 16, 0)).unwrap();
    dir
}

#[test]
fn run_writes_a_complete_run_directory() {
    let ws = workspace();
    let out = revprompt(ws.path(), &["--config", "mock.yaml", "--out", "out", "run", "ref.png"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    let run_dir = stdout
        .lines()
        .find_map(|l| l.strip_prefix("run: "))
        .map(|p| ws.path().join(p))
        .unwrap();
    let result: RunResult = serde_json::from_slice(&fs::read(run_dir.join("final.json")).unwrap()).unwrap();
    assert!(result.final_score.raw_cosine >= 0.95);
    assert_ne!(result.stop_reason, StopReason::Error);
    assert!(run_dir.join("config.json").is_file());
    assert!(run_dir.join("reference.png").is_file());
    let lines = fs::read_to_string(run_dir.join("iterations.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), result.iterations.len());
    for r in &result.iterations {
        assert!(run_dir.join(format!("images/{}.png", r.step)).is_file());
    }
    assert!(stdout.contains("final prompt: "));
}

#[test]
fn missing_reference_is_a_usage_error() {
    let ws = workspace();
    let out = revprompt(ws.path(), &["--config", "mock.yaml", "run", "absent.png"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("absent.png"));
    assert!(!ws.path().join("out").exists());
}

#[test]
fn malformed_config_names_the_key() {
    let ws = workspace();
    fs::write(ws.path().join("bad.yaml"), "run:\n  max_iterations: many\n").unwrap();
    let out = revprompt(ws.path(), &["--config", "bad.yaml", "run", "ref.png"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("run.max_iterations"), "{}", text(&out.stderr));

    fs::write(ws.path().join("dims.yaml"), "providers:\n  text_embedding:\n    kind: http\n    endpoint: http://127.0.0.1:9/e\n    model_name: m\n").unwrap();
    let out = revprompt(ws.path(), &["--config", "dims.yaml", "run", "ref.png"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("dimension"), "{}", text(&out.stderr));
}

#[test]
fn eval_prints_the_metric_table() {
    let ws = workspace();
    fs::write(ws.path().join("a.png"), render_png(&["cat", "bow"], 16, 16, 0)).unwrap();
    fs::write(ws.path().join("b.png"), render_png(&["fox", "ink"], 16, 16, 0)).unwrap();
    fs::write(ws.path().join("broken.png"), b"not a png").unwrap();
    let manifest = r#"{"entries": [
        {"id": "a", "image": "a.png", "source": "ai_generated"},
        {"id": "b", "image": "b.png", "source": "human_created"},
        {"id": "c", "image": "ref.png", "source": "ai_generated"}
    ]}"#;
    fs::write(ws.path().join("manifest.json"), manifest).unwrap();
    let out = revprompt(ws.path(), &["--config", "mock.yaml", "--out", "eval", "eval", "manifest.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let table = text(&out.stdout);
    assert!(table.contains("CLIP-T | CLIP-I"), "{table}");
    assert!(table.contains("skipped entries: 0"));
    assert_eq!(fs::read_to_string(ws.path().join("eval/report.txt")).unwrap(), table);
    assert!(ws.path().join("eval/report.json").is_file());

    let with_broken = manifest.replace("ref.png", "broken.png");
    fs::write(ws.path().join("manifest.json"), with_broken).unwrap();
    let out = revprompt(ws.path(), &["--config", "mock.yaml", "eval", "manifest.json", "--method", "caption"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("skipped entries: 1"));

    fs::write(ws.path().join("empty.json"), r#"{"entries": []}"#).unwrap();
    let out = revprompt(ws.path(), &["eval", "empty.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn classify_and_fuse() {
    let ws = workspace();
    let out = revprompt(ws.path(), &["classify", "red fox, ink wash, boat"]);
    assert_eq!(out.status.code(), Some(0));
    let c: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(c["style"][0]["text"], "ink wash");
    assert_eq!(c["content"].as_array().unwrap().len(), 2);
    fs::write(ws.path().join("c.json"), &out.stdout).unwrap();

    let out = revprompt(ws.path(), &["fuse", "--style", "c.json", "--content", "a dog, watercolor"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert_eq!(text(&out.stdout).trim(), "a dog, ink wash");

    let out = revprompt(ws.path(), &["classify"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn classify_reads_a_finished_run() {
    let ws = workspace();
    let out = revprompt(ws.path(), &["--config", "mock.yaml", "--out", "out", "run", "ref.png"]);
    let stdout = text(&out.stdout);
    let run_dir = stdout.lines().find_map(|l| l.strip_prefix("run: ")).unwrap();
    let out = revprompt(ws.path(), &["classify", "--run", run_dir]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let c: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let styles: Vec<&str> = c["style"].as_array().unwrap().iter().map(|f| f["text"].as_str().unwrap()).collect();
    assert!(styles.is_empty() || styles.iter().all(|s| !s.contains("cat")));
    assert!(c["origin"].as_str().unwrap().starts_with("run-"));
}
