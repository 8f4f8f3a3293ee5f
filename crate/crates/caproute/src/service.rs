//! HTTP/JSON routing service.
//!
//! | method | path      | body                                  |
//! |--------|-----------|---------------------------------------|
//! | POST   | `/route`  | `{"query": .., "overrides": {..}?}`   |
//! | GET    | `/health` |                                       |
//! | GET    | `/config` |                                       |
//! | GET    | `/models` |                                       |

use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Json;
use caproute_core::decision::{aggregate_records, DecisionTrace};
use caproute_core::{ConfigOverrides, HistoryEntry, RouteError, Router, Stage};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Semaphore;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteRequest {
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overrides: Option<ConfigOverrides>,
}

/// Wall-clock microseconds spent in each pipeline stage.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StageTiming {
    pub deconstruct_us: u64,
    pub sift_us: u64,
    pub decide_us: u64,
    pub total_us: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RouteResponse {
    pub chosen_model: String,
    pub ood: bool,
    pub fallback_used: bool,
    pub trace: DecisionTrace,
    pub timing: StageTiming,
}

/// Whole-store statistics for one candidate model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelStats {
    pub model: String,
    pub mean_score: Option<f64>,
    pub mean_cost: Option<f64>,
    pub support: usize,
}

pub fn model_stats<'a>(entries: impl IntoIterator<Item = &'a HistoryEntry>, models: &[String]) -> Vec<ModelStats> {
    let entries: Vec<&HistoryEntry> = entries.into_iter().collect();
    let aggs = aggregate_records(&entries, models).unwrap_or_default();
    models
        .iter()
        .map(|m| match aggs.iter().find(|a| &a.model == m) {
            Some(a) => ModelStats { model: m.clone(), mean_score: Some(a.mean_score), mean_cost: Some(a.mean_cost), support: a.support },
            None => ModelStats { model: m.clone(), mean_score: None, mean_cost: None, support: 0 },
        })
        .collect()
}

struct AppState {
    router: Arc<Router>,
    permits: Arc<Semaphore>,
    models: Vec<ModelStats>,
}

fn error(status: StatusCode, message: impl ToString) -> Response {
    (status, Json(json!({ "error": message.to_string() }))).into_response()
}

/// Builds the axum application over an immutable router snapshot.
pub fn app(router: Router, max_concurrency: usize) -> axum::Router {
    let models = model_stats(router.library().index().entries(), &router.config().candidate_models);
    let state = Arc::new(AppState {
        router: Arc::new(router),
        permits: Arc::new(Semaphore::new(max_concurrency.max(1))),
        models,
    });
    axum::Router::new()
        .route("/route", post(route))
        .route("/health", get(health))
        .route("/config", get(config))
        .route("/models", get(list_models))
        .with_state(state)
}

async fn route(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: RouteRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    if req.query.trim().is_empty() {
        return error(StatusCode::UNPROCESSABLE_ENTITY, RouteError::EmptyQuery);
    }
    let cfg = match &req.overrides {
        Some(o) => match state.router.config().with_overrides(o) {
            Ok(c) => c,
            Err(e) => return error(StatusCode::BAD_REQUEST, e),
        },
        None => state.router.config().clone(),
    };
    let Ok(_permit) = state.permits.clone().acquire_owned().await else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "service shutting down");
    };
    let router = state.router.clone();
    let joined = tokio::task::spawn_blocking(move || {
        let start = Instant::now();
        let mut marks = [0u64; 3];
        let result = router.route_with(&req.query, &cfg, |stage| {
            let i = match stage {
                Stage::Deconstructed => 0,
                Stage::Sifted => 1,
                Stage::Decided => 2,
            };
            marks[i] = start.elapsed().as_micros() as u64;
        });
        let timing = StageTiming {
            deconstruct_us: marks[0],
            sift_us: marks[1].saturating_sub(marks[0]),
            decide_us: marks[2].saturating_sub(marks[1]),
            total_us: start.elapsed().as_micros() as u64,
        };
        result.map(|d| (d, timing))
    })
    .await;
    match joined {
        Ok(Ok((d, timing))) => Json(RouteResponse {
            chosen_model: d.chosen_model,
            ood: d.ood,
            fallback_used: d.fallback_used,
            trace: d.trace,
            timing,
        })
        .into_response(),
        Ok(Err(e @ RouteError::EmptyQuery)) => error(StatusCode::UNPROCESSABLE_ENTITY, e),
        Ok(Err(e @ RouteError::InvalidConfig(_))) => error(StatusCode::BAD_REQUEST, e),
        Ok(Err(e)) => error(StatusCode::SERVICE_UNAVAILABLE, e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    let router = state.router.clone();
    let probes = tokio::task::spawn_blocking(move || {
        [router.deconstructor().probe(), router.embedder().probe(), router.evaluator().probe()]
    })
    .await
    .unwrap_or([false; 3]);
    let status = if probes.iter().all(|ok| *ok) { "ok" } else { "degraded" };
    Json(json!({
        "status": status,
        "store_size": state.router.library().len(),
        "backends": {
            "deconstructor": probes[0],
            "embedder": probes[1],
            "evaluator": probes[2],
        },
    }))
    .into_response()
}

async fn config(State(state): State<Arc<AppState>>) -> Response {
    Json(state.router.config().clone()).into_response()
}

async fn list_models(State(state): State<Arc<AppState>>) -> Response {
    Json(state.models.clone()).into_response()
}

/// Serves `app` on an already-bound listener until the task is dropped.
pub async fn serve(listener: tokio::net::TcpListener, app: axum::Router) -> std::io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app).await
}
