use std::fs;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use revprompt_core::config::AppConfig;
use revprompt_core::optimizer::IterationRecord;
use revprompt_core::providers::mock::{read_planted, render_png, vocab_index};
use revprompt_core::store::RunStore;
use revprompt_service::{spawn, AppState, IterationPage, RunHandle, RunStatus};

struct Fixture {
    base: String,
    client: Client,
    store: tempfile::TempDir,
}

fn start(yaml: &str) -> Fixture {
    let config = AppConfig::parse(yaml).unwrap();
    let runtime = config.build().unwrap();
    let store = tempfile::tempdir().unwrap();
    let state = AppState::new(
        runtime,
        config.run.clone(),
        RunStore::new(store.path()),
        config.service.max_concurrent_runs,
    );
    let addr = spawn(Arc::new(state), SocketAddr::from(([127, 0, 0, 1], 0))).unwrap();
    Fixture {
        base: format!("http://{addr}"),
        client: Client::new(),
        store,
    }
}

const MOCK: &str = "run:\n  initial_prompt: dog\n  width: 16\n  height: 16\n";

impl Fixture {
    fn post(&self, path: &str, body: &Value) -> (StatusCode, Value) {
        let resp = self.client.post(format!("{}{path}", self.base)).json(body).send().unwrap();
        let status = resp.status();
        (status, resp.json().unwrap())
    }

    fn get(&self, path: &str) -> (StatusCode, Value) {
        let resp = self.client.get(format!("{}{path}", self.base)).send().unwrap();
        let status = resp.status();
        (status, resp.json().unwrap())
    }

    fn start_run(&self, words: &[&str]) -> String {
        let png = render_png(words, 16, 16, 0);
        let (status, body) = self.post("/runs", &json!({ "image": BASE64.encode(png) }));
        assert_eq!(status, StatusCode::ACCEPTED, "{body}");
        assert_eq!(body["status"], "queued");
        body["run_id"].as_str().unwrap().to_string()
    }

    /// Polls iterations with the since-cursor until the run finishes.
    fn follow(&self, id: &str) -> (RunHandle, Vec<IterationRecord>) {
        let deadline = Instant::now() + Duration::from_secs(30);
        let mut cursor = 0;
        let mut collected = Vec::new();
        let mut last_completed = 0;
        loop {
            let (status, page) = self.get(&format!("/runs/{id}/iterations?since={cursor}"));
            assert_eq!(status, StatusCode::OK);
            let page: IterationPage = serde_json::from_value(page).unwrap();
            assert_eq!(page.since, cursor);
            assert_eq!(page.next, cursor + page.iterations.len());
            cursor = page.next;
            collected.extend(page.iterations);

            let (_, handle) = self.get(&format!("/runs/{id}"));
            let handle: RunHandle = serde_json::from_value(handle).unwrap();
            assert!(handle.progress.completed >= last_completed);
            last_completed = handle.progress.completed;
            if matches!(handle.status, RunStatus::Done | RunStatus::Failed) {
                let (_, tail) = self.get(&format!("/runs/{id}/iterations?since={cursor}"));
                let tail: IterationPage = serde_json::from_value(tail).unwrap();
                collected.extend(tail.iterations);
                return (handle, collected);
            }
            assert!(Instant::now() < deadline, "run did not finish");
            thread::sleep(Duration::from_millis(5));
        }
    }
}

#[test]
fn run_lifecycle_and_gap_free_pagination() {
    let fx = start(MOCK);
    let id = fx.start_run(&["cat", "blue", "bow", "tie"]);
    let (handle, pages) = fx.follow(&id);
    assert_eq!(handle.status, RunStatus::Done);
    let result = handle.result.unwrap();
    assert!(result.final_score.raw_cosine >= 0.95);
    assert_eq!(handle.progress.completed, result.iterations.len());
    assert_eq!(pages, result.iterations);

    let jsonl = fs::read_to_string(fx.store.path().join(&id).join("iterations.jsonl")).unwrap();
    let served: Vec<String> = pages.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
    assert_eq!(served, jsonl.lines().collect::<Vec<_>>());
    assert!(fx.store.path().join(&id).join("final.json").is_file());

    let resp = fx.client.get(format!("{}/runs/{id}/images/0", fx.base)).send().unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "image/png");
    let png = resp.bytes().unwrap();
    assert_eq!(&png[..], &fs::read(fx.store.path().join(&id).join("images/0.png")).unwrap()[..]);
    let dog = vocab_index("dog").unwrap();
    assert!(read_planted(&png).unwrap().contains(&dog));

    let (status, err) = fx.get(&format!("/runs/{id}/images/99"));
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["error"], "not_found");

    let (_, again) = fx.get(&format!("/runs/{id}/iterations?since=0"));
    let again: IterationPage = serde_json::from_value(again).unwrap();
    assert_eq!(again.iterations, pages);
}

#[test]
fn concurrent_runs_are_isolated() {
    let fx = start("run:\n  initial_prompt: dog\n  width: 16\n  height: 16\nservice:\n  max_concurrent_runs: 1\n");
    let a = fx.start_run(&["cat", "bow"]);
    let b = fx.start_run(&["fox", "ink"]);
    let (ha, _) = fx.follow(&a);
    let (hb, _) = fx.follow(&b);
    let ra = ha.result.unwrap();
    let rb = hb.result.unwrap();
    assert_ne!(ra.reference.id, rb.reference.id);
    assert!(ra.final_prompt.texts().contains(&"cat"));
    assert!(rb.final_prompt.texts().contains(&"fox"));
}

#[test]
fn unknown_run_is_404() {
    let fx = start(MOCK);
    for path in ["/runs/unknown", "/runs/unknown/iterations?since=0", "/runs/unknown/images/0"] {
        let (status, body) = fx.get(path);
        assert_eq!(status, StatusCode::NOT_FOUND, "{path}");
        assert_eq!(body["error"], "not_found");
        assert!(body["detail"].as_str().unwrap().contains("unknown"));
    }
}

#[test]
fn invalid_bodies_are_422() {
    let fx = start(MOCK);
    let (status, body) = fx.post("/runs", &json!({ "image": "%%%" }));
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "invalid_request");
    let (status, _) = fx.post("/runs", &json!({}));
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, body) = fx.post("/runs", &json!({ "image_path": "/nonexistent/ref.png" }));
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["detail"].as_str().unwrap().contains("/nonexistent/ref.png"));
    let png = BASE64.encode(render_png(&["cat"], 8, 8, 0));
    let (status, body) = fx.post("/runs", &json!({ "image": png, "run": { "max_iterations": 0 } }));
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["detail"].as_str().unwrap().contains("max_iterations"));
    let (status, body) = fx.post("/prompts/modify", &json!({ "prompt": "a", "find": "" , "replace": "b" }));
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    let (status, body) = fx.post("/generate", &json!({ "prompt": "cat" }));
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["detail"].as_str().unwrap().contains("seed"));
}

#[test]
fn editing_endpoints() {
    let fx = start(MOCK);
    let (status, c) = fx.post("/prompts/classify", &json!({ "prompt": "red fox, ink wash, boat" }));
    assert_eq!(status, StatusCode::OK, "{c}");
    let content: Vec<&str> = c["content"].as_array().unwrap().iter().map(|f| f["text"].as_str().unwrap()).collect();
    let style: Vec<&str> = c["style"].as_array().unwrap().iter().map(|f| f["text"].as_str().unwrap()).collect();
    assert_eq!(content, vec!["red fox", "boat"]);
    assert_eq!(style, vec!["ink wash"]);

    let (status, m) = fx.post(
        "/prompts/modify",
        &json!({ "prompt": "imaginative landscape, dramatic sky", "find": "landscape", "replace": "cityscape" }),
    );
    assert_eq!(status, StatusCode::OK);
    assert_eq!(m["text"], "imaginative cityscape, dramatic sky");

    let (status, m) = fx.post(
        "/prompts/modify",
        &json!({ "classified": c, "aspect": "style", "find": "ink", "replace": "oil" }),
    );
    assert_eq!(status, StatusCode::OK);
    assert_eq!(m["style"][0]["text"], "oil wash");
    assert_eq!(m["content"][0]["text"], "red fox");

    let (_, other) = fx.post("/prompts/classify", &json!({ "prompt": "a dog, watercolor" }));
    let (status, fused) = fx.post("/prompts/fuse", &json!({ "style_source": other, "content_source": c }));
    assert_eq!(status, StatusCode::OK, "{fused}");
    assert_eq!(fused["text"], "red fox, boat, watercolor");

    let empty = json!({ "content": [], "style": [], "origin": "external" });
    let (status, _) = fx.post("/prompts/fuse", &json!({ "style_source": empty, "content_source": empty }));
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[test]
fn one_off_generation() {
    let fx = start(MOCK);
    let (status, g) = fx.post("/generate", &json!({ "prompt": "cat, blue", "seed": 3, "width": 8, "height": 8 }));
    assert_eq!(status, StatusCode::OK, "{g}");
    assert_eq!(g["seed"], 3);
    let png = BASE64.decode(g["image"].as_str().unwrap()).unwrap();
    let planted = read_planted(&png).unwrap();
    assert_eq!(planted.len(), 2);
    let (_, again) = fx.post("/generate", &json!({ "prompt": "cat, blue", "seed": 3, "width": 8, "height": 8 }));
    assert_eq!(again["image_id"], g["image_id"]);
}

#[test]
fn backend_failure_is_502() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let yaml = format!(
        "providers:\n  text_to_image:\n    kind: http\n    endpoint: http://127.0.0.1:{port}/gen\n    model_name: sd\n    max_retries: 0\n"
    );
    let fx = start(&yaml);
    let (status, body) = fx.post("/generate", &json!({ "prompt": "cat", "seed": 1 }));
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(body["error"], "backend_failure");

    let png = BASE64.encode(render_png(&["cat"], 8, 8, 0));
    let (_, started) = fx.post("/runs", &json!({ "image": png, "run": { "initial_prompt": "dog" } }));
    let id = started["run_id"].as_str().unwrap().to_string();
    let (handle, pages) = fx.follow(&id);
    assert_eq!(handle.status, RunStatus::Failed);
    assert_eq!(pages.len(), 1);
    assert!(handle.error.unwrap().contains("text_to_image"));
}
