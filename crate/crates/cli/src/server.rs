//! HTTP service: `POST /query`, `GET /health`, optional static files.
//!
//! ```text
//! POST /query {"question": "...", "strategy": "hybrid", "depth": 50, "keep_n": 10}
//! 200 {"response", "used_PMIDs", "documents": [{"PMID", "title", "score", "stage"}],
//!      "timings": {...}, "flags": [...]}
//! 400 {"error"}            empty question or invalid parameters
//! 502 {"error", "stage"}   a backend (retrieval, rerank, generation) failed
//! 503 {"error"}            index or component not loaded
//! 504 {"error"}            request exceeded the configured timeout
//! ```

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::{Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use medrag::generate::QAResult;
use medrag::pipeline::PipelineError;
use medrag::{Pipeline, RetrievalConfig, Stage, Strategy, Timings};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

fn default_strategy() -> Strategy {
    Strategy::Hybrid
}
fn default_depth() -> usize {
    50
}
fn default_keep_n() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub question: String,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_keep_n")]
    pub keep_n: usize,
}

impl QueryRequest {
    pub fn config(&self) -> RetrievalConfig {
        RetrievalConfig {
            strategy: self.strategy,
            depth: self.depth,
            keep_n: self.keep_n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseDoc {
    #[serde(rename = "PMID")]
    pub pmid: String,
    pub title: String,
    pub score: f64,
    pub stage: Stage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub response: String,
    #[serde(rename = "used_PMIDs")]
    pub used_pmids: Vec<String>,
    pub documents: Vec<ResponseDoc>,
    pub timings: Timings,
    pub flags: Vec<String>,
}

impl QueryResponse {
    pub fn from_result(result: QAResult, pipeline: &Pipeline) -> Self {
        let documents = result
            .documents
            .into_iter()
            .map(|d| ResponseDoc {
                title: pipeline
                    .documents()
                    .by_pmid(&d.pmid)
                    .map(|doc| doc.title.clone())
                    .unwrap_or_default(),
                pmid: d.pmid,
                score: d.score,
                stage: d.stage,
            })
            .collect();
        Self {
            response: result.response,
            used_pmids: result.used_pmids,
            documents,
            timings: result.timings,
            flags: result.flags.iter().map(ToString::to_string).collect(),
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    pub pipeline: Option<Arc<Pipeline>>,
    pub timeout: Duration,
}

/// A JSON error body with its status.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
    pub stage: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            stage: None,
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match &e {
            PipelineError::EmptyQuery | PipelineError::InvalidConfig(_) => Self::new(StatusCode::BAD_REQUEST, e.to_string()),
            PipelineError::Missing(_) => Self::new(StatusCode::SERVICE_UNAVAILABLE, e.to_string()),
            PipelineError::Stage { stage, .. } => Self {
                status: StatusCode::BAD_GATEWAY,
                message: e.to_string(),
                stage: Some(stage.to_string()),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = match &self.stage {
            Some(stage) => json!({ "error": self.message, "stage": stage }),
            None => json!({ "error": self.message }),
        };
        (self.status, Json(body)).into_response()
    }
}

async fn query(State(state): State<AppState>, Json(req): Json<QueryRequest>) -> Result<Response, ApiError> {
    if req.question.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "question is empty"));
    }
    let pipeline = state
        .pipeline
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no index loaded"))?;
    let config = req.config();
    let worker = {
        let pipeline = pipeline.clone();
        tokio::task::spawn_blocking(move || pipeline.answer_question(&req.question, &config))
    };
    let result = match tokio::time::timeout(state.timeout, worker).await {
        Err(_) => return Err(ApiError::new(StatusCode::GATEWAY_TIMEOUT, "request timed out")),
        Ok(Err(join)) => return Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, join.to_string())),
        Ok(Ok(r)) => r?,
    };
    let timings = result.timings;
    let mut resp = Json(QueryResponse::from_result(result, &pipeline)).into_response();
    resp.extensions_mut().insert(timings);
    Ok(resp)
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    let (documents, strategies): (usize, Vec<&str>) = match &state.pipeline {
        Some(p) => (
            p.documents().len(),
            Strategy::ALL
                .iter()
                .filter(|s| p.supports(**s).is_ok())
                .map(|s| s.as_str())
                .collect(),
        ),
        None => (0, Vec::new()),
    };
    Json(json!({ "status": "ok", "documents": documents, "strategies": strategies }))
}

/// One JSON log line per request on stderr.
async fn log_request(req: Request, next: Next) -> Response {
    let start = Instant::now();
    let method = req.method().to_string();
    let path = req.uri().path().to_owned();
    let resp = next.run(req).await;
    let mut line = json!({
        "method": method,
        "path": path,
        "status": resp.status().as_u16(),
        "elapsed_ms": start.elapsed().as_secs_f64() * 1e3,
    });
    if let Some(t) = resp.extensions().get::<Timings>() {
        line["timings"] = serde_json::to_value(t).unwrap_or_default();
    }
    eprintln!("{line}");
    resp
}

pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let mut app = Router::new()
        .route("/query", post(query))
        .route("/health", get(health))
        .with_state(state);
    if let Some(dir) = static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    app.layer(middleware::from_fn(log_request))
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = terminate => {},
    }
}

/// Serves until SIGINT/SIGTERM, then drains in-flight requests.
pub async fn serve(bind: &str, app: Router) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    eprintln!("{}", json!({ "event": "listening", "addr": listener.local_addr()?.to_string() }));
    axum::serve(listener, app).with_graceful_shutdown(shutdown_signal()).await?;
    Ok(())
}
