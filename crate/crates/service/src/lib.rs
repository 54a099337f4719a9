//! HTTP API: start and poll runs, fetch their images, edit prompts, generate one-off images.
//!
//! Backends are blocking, so every call that reaches one runs on the blocking pool.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Semaphore;

use revprompt_core::config::Runtime;
use revprompt_core::editing::{self, ClassifiedPrompt, EXTERNAL_ORIGIN};
use revprompt_core::error::Error;
use revprompt_core::image::ImageRef;
use revprompt_core::optimizer::{IterationRecord, Optimizer, RunConfig, RunResult, RunSink, StopReason};
use revprompt_core::prompt::{parse_tags, Aspect, TagPrompt};
use revprompt_core::providers::GenerationRequest;
use revprompt_core::store::{RunDir, RunStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Progress {
    pub completed: usize,
    pub max: usize,
}

/// Snapshot returned by `GET /runs/{id}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunHandle {
    pub run_id: String,
    pub status: RunStatus,
    pub progress: Progress,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<RunResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct RunState {
    status: RunStatus,
    max: usize,
    iterations: Vec<IterationRecord>,
    result: Option<RunResult>,
    error: Option<String>,
}

impl RunState {
    /// Status only moves forward.
    fn advance(&mut self, to: RunStatus) {
        if to > self.status {
            self.status = to;
        }
    }
}

struct RunEntry {
    dir: RunDir,
    state: Mutex<RunState>,
}

pub struct AppState {
    runtime: Runtime,
    run_config: RunConfig,
    store: RunStore,
    runs: RwLock<HashMap<String, Arc<RunEntry>>>,
    slots: Arc<Semaphore>,
}

impl AppState {
    pub fn new(runtime: Runtime, run_config: RunConfig, store: RunStore, max_concurrent_runs: usize) -> Self {
        Self {
            runtime,
            run_config,
            store,
            runs: RwLock::default(),
            slots: Arc::new(Semaphore::new(max_concurrent_runs.max(1))),
        }
    }

    fn entry(&self, id: &str) -> Result<Arc<RunEntry>, ApiError> {
        self.runs
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no run {id}")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    error: &'static str,
    detail: String,
}

impl ApiError {
    fn not_found(detail: String) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            error: "not_found",
            detail,
        }
    }

    fn invalid(detail: impl ToString) -> Self {
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            error: "invalid_request",
            detail: detail.to_string(),
        }
    }

    fn internal(detail: impl ToString) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            error: "internal",
            detail: detail.to_string(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::Provider(_) => Self {
                status: StatusCode::BAD_GATEWAY,
                error: "backend_failure",
                detail: e.to_string(),
            },
            Error::Io { .. } => Self::internal(e),
            _ => Self::invalid(e),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.error, "detail": self.detail }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Parses a JSON body, reporting the failing field as a 422.
fn body<T: DeserializeOwned>(bytes: &Bytes) -> ApiResult<T> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| ApiError::invalid(format!("{} at `{}`", e.inner(), e.path())))
}

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

/// A prompt given as tag text or as a fragment list.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum PromptInput {
    Text(String),
    Fragments(TagPrompt),
}

impl PromptInput {
    fn into_prompt(self) -> TagPrompt {
        match self {
            PromptInput::Text(t) => parse_tags(&t),
            PromptInput::Fragments(p) => p,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StartRun {
    /// Base64 PNG.
    image: Option<String>,
    image_path: Option<std::path::PathBuf>,
    run: Option<RunConfig>,
}

struct ServiceSink {
    entry: Arc<RunEntry>,
    dir: RunDir,
}

impl RunSink for ServiceSink {
    fn started(&mut self, run_id: &str, config: &RunConfig, reference: &ImageRef) -> revprompt_core::error::Result<()> {
        self.dir.started(run_id, config, reference)?;
        self.entry.state.lock().unwrap().advance(RunStatus::Running);
        Ok(())
    }

    fn iteration(&mut self, record: &IterationRecord, image: Option<&ImageRef>) -> revprompt_core::error::Result<()> {
        self.dir.iteration(record, image)?;
        self.entry.state.lock().unwrap().iterations.push(record.clone());
        Ok(())
    }

    fn finished(&mut self, result: &RunResult) -> revprompt_core::error::Result<()> {
        self.dir.finished(result)
    }
}

async fn start_run(State(app): State<Arc<AppState>>, bytes: Bytes) -> ApiResult<Response> {
    let req: StartRun = body(&bytes)?;
    let reference = match (req.image, req.image_path) {
        (Some(b64), None) => {
            let png = BASE64.decode(b64.trim()).map_err(|e| ApiError::invalid(format!("image: {e}")))?;
            ImageRef::from_png(png, None)?
        }
        (None, Some(path)) => ImageRef::from_path(&path).map_err(ApiError::invalid)?,
        _ => return Err(ApiError::invalid("give exactly one of image or image_path")),
    };
    let config = req.run.unwrap_or_else(|| app.run_config.clone());
    let rt = &app.runtime;
    let optimizer = Optimizer::new(rt.backends.clone(), rt.templates.clone(), rt.cache.clone(), config)?;

    let run_id = uuid::Uuid::new_v4().to_string();
    let entry = Arc::new(RunEntry {
        dir: app.store.run_dir(&run_id),
        state: Mutex::new(RunState {
            status: RunStatus::Queued,
            max: optimizer.config().max_iterations,
            iterations: Vec::new(),
            result: None,
            error: None,
        }),
    });
    app.runs.write().unwrap().insert(run_id.clone(), entry.clone());

    let slots = app.slots.clone();
    let id = run_id.clone();
    tokio::spawn(async move {
        let _permit = slots.acquire_owned().await.expect("semaphore is never closed");
        let task_entry = entry.clone();
        let outcome = tokio::task::spawn_blocking(move || {
            let mut sink = ServiceSink {
                dir: task_entry.dir.clone(),
                entry: task_entry,
            };
            optimizer.run_with_id(&id, &reference, &mut sink)
        })
        .await;
        let mut state = entry.state.lock().unwrap();
        match outcome {
            Ok(Ok(result)) => {
                if result.stop_reason == StopReason::Error {
                    state.error = result.error.clone();
                    state.advance(RunStatus::Failed);
                } else {
                    state.advance(RunStatus::Done);
                }
                state.result = Some(result);
            }
            Ok(Err(e)) => {
                log::error!("run failed: {e}");
                state.error = Some(e.to_string());
                state.advance(RunStatus::Failed);
            }
            Err(e) => {
                state.error = Some(format!("run task panicked: {e}"));
                state.advance(RunStatus::Failed);
            }
        }
    });

    Ok((StatusCode::ACCEPTED, Json(json!({ "run_id": run_id, "status": RunStatus::Queued }))).into_response())
}

async fn get_run(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<RunHandle>> {
    let entry = app.entry(&id)?;
    let s = entry.state.lock().unwrap();
    Ok(Json(RunHandle {
        run_id: id,
        status: s.status,
        progress: Progress {
            completed: s.iterations.len(),
            max: s.max,
        },
        result: s.result.clone(),
        error: s.error.clone(),
    }))
}

#[derive(Deserialize)]
struct Since {
    #[serde(default)]
    since: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationPage {
    pub run_id: String,
    pub since: usize,
    /// Cursor for the next poll.
    pub next: usize,
    pub status: RunStatus,
    pub iterations: Vec<IterationRecord>,
}

async fn get_iterations(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<Since>,
) -> ApiResult<Json<IterationPage>> {
    let entry = app.entry(&id)?;
    let s = entry.state.lock().unwrap();
    let iterations: Vec<IterationRecord> = s.iterations.iter().skip(q.since).cloned().collect();
    Ok(Json(IterationPage {
        run_id: id,
        since: q.since,
        next: q.since + iterations.len(),
        status: s.status,
        iterations,
    }))
}

async fn get_image(State(app): State<Arc<AppState>>, Path((id, step)): Path<(String, usize)>) -> ApiResult<Response> {
    let entry = app.entry(&id)?;
    let path = entry.dir.image_path(step);
    let png = tokio::fs::read(&path)
        .await
        .map_err(|_| ApiError::not_found(format!("run {id} has no image for step {step}")))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifyRequest {
    prompt: PromptInput,
    origin: Option<String>,
}

async fn classify(State(app): State<Arc<AppState>>, bytes: Bytes) -> ApiResult<Json<ClassifiedPrompt>> {
    let req: ClassifyRequest = body(&bytes)?;
    let prompt = req.prompt.into_prompt();
    let origin = req.origin.unwrap_or_else(|| EXTERNAL_ORIGIN.into());
    let llm = app.runtime.backends.llm.clone();
    let templates = app.runtime.templates.clone();
    let c = blocking(move || Ok(editing::classify(&prompt, llm.as_ref(), &templates, &origin)?)).await?;
    Ok(Json(c))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModifyRequest {
    prompt: Option<PromptInput>,
    classified: Option<ClassifiedPrompt>,
    /// Restricts a classified edit to one part.
    aspect: Option<Aspect>,
    find: String,
    replace: String,
}

async fn modify(bytes: Bytes) -> ApiResult<Response> {
    let req: ModifyRequest = body(&bytes)?;
    match (req.prompt, req.classified) {
        (Some(p), None) => {
            let out = editing::modify(&p.into_prompt(), &req.find, &req.replace)?;
            Ok(Json(json!({ "prompt": out, "text": out.render() })).into_response())
        }
        (None, Some(c)) => Ok(Json(c.modify(req.aspect, &req.find, &req.replace)?).into_response()),
        _ => Err(ApiError::invalid("give exactly one of prompt or classified")),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FuseRequest {
    style_source: ClassifiedPrompt,
    content_source: ClassifiedPrompt,
}

async fn fuse(bytes: Bytes) -> ApiResult<Response> {
    let req: FuseRequest = body(&bytes)?;
    let out = editing::fuse(&req.style_source, &req.content_source)?;
    Ok(Json(json!({ "prompt": out, "text": out.render() })).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateRequest {
    prompt: PromptInput,
    seed: u64,
    width: Option<u32>,
    height: Option<u32>,
    steps: Option<u32>,
}

async fn generate(State(app): State<Arc<AppState>>, bytes: Bytes) -> ApiResult<Response> {
    let req: GenerateRequest = body(&bytes)?;
    let prompt = req.prompt.into_prompt();
    let mut gen = GenerationRequest::new(
        prompt.render(),
        req.seed,
        req.width.unwrap_or(app.run_config.width),
        req.height.unwrap_or(app.run_config.height),
    );
    gen.steps = req.steps;
    gen.validate().map_err(ApiError::invalid)?;
    let generator = app.runtime.backends.image_gen.clone();
    let image = blocking(move || Ok(generator.generate_image(&gen).map_err(Error::from)?)).await?;
    let png = image.bytes()?;
    Ok(Json(json!({
        "image_id": image.id,
        "seed": image.seed,
        "width": image.width,
        "height": image.height,
        "prompt": prompt.render(),
        "image": BASE64.encode(png),
    }))
    .into_response())
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such route".into())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/runs", post(start_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/iterations", get(get_iterations))
        .route("/runs/{id}/images/{step}", get(get_image))
        .route("/prompts/classify", post(classify))
        .route("/prompts/modify", post(modify))
        .route("/prompts/fuse", post(fuse))
        .route("/generate", post(generate))
        .fallback(fallback)
        .with_state(state)
}

/// Serves until the process exits.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Serves on a fresh multi-threaded runtime, blocking the caller.
pub fn serve_blocking(state: Arc<AppState>, listener: std::net::TcpListener) -> std::io::Result<()> {
    listener.set_nonblocking(true)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move { serve(tokio::net::TcpListener::from_std(listener)?, state).await })
}

/// Starts the service on its own thread and returns the bound address.
pub fn spawn(state: Arc<AppState>, bind: SocketAddr) -> std::io::Result<SocketAddr> {
    let listener = std::net::TcpListener::bind(bind)?;
    let addr = listener.local_addr()?;
    std::thread::spawn(move || {
        if let Err(e) = serve_blocking(state, listener) {
            log::error!("service stopped: {e}");
        }
    });
    Ok(addr)
}
