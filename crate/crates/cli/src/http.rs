//! HTTP gateway. Each handler maps one request onto one module call and
//! serializes the result unchanged.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tower::limit::ConcurrencyLimitLayer;
use tower_http::services::ServeDir;

use pcd_core::corpus::{load_corpus_dir, Corpus, LoadMode};
use pcd_core::evaluation::EvalReport;
use pcd_core::interview::{SessionRegistry, Strategy};
use pcd_core::{QuestionId, TriValue};

use crate::error::ApiError;
use crate::evaluate::EvaluateRequest;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub corpus_dir: PathBuf,
    /// Append-only session log; sessions are replayed from it at startup.
    pub session_store: Option<PathBuf>,
    /// Directory served for paths no endpoint claims (the UI bundle).
    pub static_dir: Option<PathBuf>,
    /// Global cap on requests handled at once.
    pub max_in_flight: usize,
    pub max_body_bytes: usize,
    /// Evaluation jobs allowed to run at the same time.
    pub max_jobs: usize,
    /// Remote oracle endpoint used when `POST /evaluate` names none.
    pub default_endpoint: Option<String>,
}

impl ServiceConfig {
    pub fn new(bind: SocketAddr, corpus_dir: PathBuf) -> Self {
        ServiceConfig {
            bind,
            corpus_dir,
            session_store: None,
            static_dir: None,
            max_in_flight: 256,
            max_body_bytes: 1 << 20,
            max_jobs: 1,
            default_endpoint: None,
        }
    }

    pub fn check(&self) -> Result<(), ApiError> {
        if !self.corpus_dir.is_dir() {
            return Err(ApiError::new(
                400,
                "missing_file",
                format!(
                    "corpus directory {} does not exist",
                    self.corpus_dir.display()
                ),
            ));
        }
        if let Some(dir) = &self.static_dir {
            if !dir.is_dir() {
                return Err(ApiError::new(
                    400,
                    "missing_file",
                    format!("static directory {} does not exist", dir.display()),
                ));
            }
        }
        if self.max_in_flight == 0 || self.max_jobs == 0 {
            return Err(ApiError::bad_request(
                "max_in_flight and max_jobs must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum JobState {
    Running,
    Done(Arc<EvalReport>),
    Failed(ApiError),
}

/// Evaluation jobs triggered over HTTP.
#[derive(Debug)]
pub struct Jobs {
    max_running: usize,
    jobs: Mutex<HashMap<String, JobState>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobAccepted {
    pub job_id: String,
    pub status: String,
}

impl Jobs {
    pub fn new(max_running: usize) -> Self {
        Jobs {
            max_running,
            jobs: Mutex::new(HashMap::new()),
        }
    }

    fn reserve(&self) -> Result<String, ApiError> {
        let mut jobs = self.jobs.lock();
        let running = jobs
            .values()
            .filter(|j| matches!(j, JobState::Running))
            .count();
        if running >= self.max_running {
            return Err(ApiError::new(
                409,
                "evaluation_busy",
                "an evaluation job is already running",
            ));
        }
        let id = uuid::Uuid::new_v4().simple().to_string();
        jobs.insert(id.clone(), JobState::Running);
        Ok(id)
    }

    fn complete(&self, id: &str, result: Result<EvalReport, ApiError>) {
        let state = match result {
            Ok(r) => JobState::Done(Arc::new(r)),
            Err(e) => JobState::Failed(e),
        };
        self.jobs.lock().insert(id.to_string(), state);
    }

    /// The finished report, `None` while running.
    pub fn report(&self, id: &str) -> Result<Option<Arc<EvalReport>>, ApiError> {
        match self.jobs.lock().get(id) {
            None => Err(ApiError::not_found(
                "unknown_job",
                format!("unknown evaluation job {id:?}"),
            )),
            Some(JobState::Running) => Ok(None),
            Some(JobState::Done(r)) => Ok(Some(r.clone())),
            Some(JobState::Failed(e)) => Err(e.clone()),
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    pub corpus: Arc<Corpus>,
    pub sessions: Arc<SessionRegistry>,
    pub jobs: Arc<Jobs>,
    pub default_endpoint: Option<String>,
}

impl AppState {
    pub fn new(corpus: Arc<Corpus>, sessions: Arc<SessionRegistry>, max_jobs: usize) -> Self {
        AppState {
            corpus,
            sessions,
            jobs: Arc::new(Jobs::new(max_jobs)),
            default_endpoint: None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        json_response(status, &self)
    }
}

/// Serializes with `serde_json::to_vec`, so bodies are byte-identical to
/// serializing the module result directly.
pub fn json_response<T: Serialize>(status: StatusCode, value: &T) -> Response {
    let body = serde_json::to_vec(value).expect("response serializes");
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

type ApiResult = Result<Response, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub policy_id: String,
    #[serde(default)]
    pub strategy: Strategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerBody {
    pub question_id: QuestionId,
    pub answer: TriValue,
}

async fn healthz() -> Response {
    json_response(StatusCode::OK, &serde_json::json!({ "status": "ok" }))
}

async fn list_policies(State(s): State<AppState>) -> Response {
    json_response(StatusCode::OK, &s.corpus.policies())
}

async fn get_policy(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let p = s
        .corpus
        .policy(&id)
        .ok_or_else(|| ApiError::not_found("unknown_policy", format!("unknown policy {id:?}")))?;
    Ok(json_response(StatusCode::OK, p))
}

async fn create_session(State(s): State<AppState>, body: Bytes) -> ApiResult {
    let req: CreateSession = parse_body(&body)?;
    let view = s.sessions.create(&req.policy_id, req.strategy)?;
    Ok(json_response(StatusCode::CREATED, &view))
}

async fn get_session(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    Ok(json_response(StatusCode::OK, &s.sessions.get(&id)?))
}

async fn answer_session(
    State(s): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult {
    let req: AnswerBody = parse_body(&body)?;
    Ok(json_response(
        StatusCode::OK,
        &s.sessions.answer(&id, req.question_id, req.answer)?,
    ))
}

async fn abandon_session(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    Ok(json_response(StatusCode::OK, &s.sessions.abandon(&id)?))
}

async fn start_evaluation(State(s): State<AppState>, body: Bytes) -> ApiResult {
    let mut req: EvaluateRequest = parse_body(&body)?;
    if req.endpoint.is_none() {
        req.endpoint = s.default_endpoint.clone();
    }
    let oracle = req.build_oracle(&s.corpus)?;
    let job_id = s.jobs.reserve()?;
    let (corpus, jobs, id) = (s.corpus.clone(), s.jobs.clone(), job_id.clone());
    tokio::task::spawn_blocking(move || {
        let result = req.run_with(&corpus, &oracle);
        jobs.complete(&id, result);
    });
    Ok(json_response(
        StatusCode::ACCEPTED,
        &JobAccepted {
            job_id,
            status: "running".into(),
        },
    ))
}

async fn get_evaluation(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    Ok(match s.jobs.report(&id)? {
        Some(report) => json_response(StatusCode::OK, &*report),
        None => json_response(
            StatusCode::ACCEPTED,
            &JobAccepted {
                job_id: id,
                status: "running".into(),
            },
        ),
    })
}

async fn not_found() -> ApiError {
    ApiError::not_found("not_found", "no such endpoint")
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/policies", get(list_policies))
        .route("/policies/{id}", get(get_policy))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/answer", post(answer_session))
        .route("/sessions/{id}/abandon", post(abandon_session))
        .route("/evaluate", post(start_evaluation))
        .route("/evaluate/{job_id}", get(get_evaluation))
        .fallback(not_found)
        .with_state(state)
}

/// Router with request limits and, if configured, the static UI bundle.
pub fn app(config: &ServiceConfig, state: AppState) -> Router {
    let mut app = router(state);
    if let Some(dir) = &config.static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    app.layer(DefaultBodyLimit::max(config.max_body_bytes))
        .layer(ConcurrencyLimitLayer::new(config.max_in_flight))
}

pub fn load_state(config: &ServiceConfig) -> Result<AppState, ApiError> {
    config.check()?;
    let (corpus, _violations) = load_corpus_dir(&config.corpus_dir, LoadMode::Audit)?;
    let corpus = Arc::new(corpus);
    let sessions = match &config.session_store {
        Some(path) => SessionRegistry::with_store(corpus.clone(), path)?,
        None => SessionRegistry::new(corpus.clone()),
    };
    let mut state = AppState::new(corpus, Arc::new(sessions), config.max_jobs);
    state.default_endpoint = config.default_endpoint.clone();
    Ok(state)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

/// Serves until SIGINT/SIGTERM, letting in-flight requests finish.
pub async fn serve(config: ServiceConfig) -> Result<(), ApiError> {
    let state = load_state(&config)?;
    let app = app(&config, state);
    let listener = tokio::net::TcpListener::bind(config.bind)
        .await
        .map_err(|e| ApiError::new(500, "bind_failed", format!("{}: {e}", config.bind)))?;
    eprintln!(
        "listening on http://{}",
        listener
            .local_addr()
            .map(|a| a.to_string())
            .unwrap_or_default()
    );
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown_signal())
        .await
        .map_err(|e| ApiError::new(500, "server_error", e.to_string()))
}
