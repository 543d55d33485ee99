//! Stateless reward scoring service.
//!
//! Weights arrive per request, either explicit or as a preset name, so one
//! running service covers weight sweeps and both training methods.
//!
//! Routes: `POST /v1/score`, `POST /v1/score_batch`, `GET /healthz`.

use axum::extract::{DefaultBodyLimit, Json};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};

use crate::reward::{total_reward, PresetSpec, RewardWeights};
use crate::types::{Assessment, Label, TaskKind};

/// One scoring request. Exactly one of `weights` or `preset` must be set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub kind: TaskKind,
    pub output_text: String,
    pub gold: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth_label: Option<Assessment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<RewardWeights>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<PresetSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub r_f: i8,
    pub r_p: i8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_r: Option<i8>,
    pub total: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

/// One entry of a batch response: either the scores or an error message.
#[derive(Debug, Serialize, Deserialize)]
pub struct BatchEntry {
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub scores: Option<ScoreResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BatchRequest {
    pub items: Vec<ScoreRequest>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BatchResponse {
    pub results: Vec<BatchEntry>,
}

fn score_one(req: &ScoreRequest, default_weights: Option<RewardWeights>) -> Result<ScoreResponse, String> {
    let weights: RewardWeights = match (&req.weights, &req.preset) {
        (Some(weights), None) => *weights,
        (None, Some(preset)) => preset.weights(),
        (Some(_), Some(_)) => return Err("supply either `weights` or `preset`, not both".into()),
        (None, None) => default_weights
            .ok_or("one of `weights` or `preset` is required (no server default configured)")?,
    };
    let breakdown = total_reward(req.kind, &req.output_text, req.gold, req.synth_label, &weights)
        .map_err(|e| e.to_string())?;
    Ok(ScoreResponse {
        r_f: breakdown.r_f,
        r_p: breakdown.r_p,
        r_r: breakdown.r_r,
        total: breakdown.total,
    })
}

#[derive(Clone, Copy, Default)]
struct ServiceState {
    default_weights: Option<RewardWeights>,
}

async fn score(
    axum::extract::State(state): axum::extract::State<ServiceState>,
    Json(req): Json<ScoreRequest>,
) -> Result<Json<ScoreResponse>, (StatusCode, Json<ErrorBody>)> {
    score_one(&req, state.default_weights)
        .map(Json)
        .map_err(|error| (StatusCode::BAD_REQUEST, Json(ErrorBody { error })))
}

async fn score_batch(
    axum::extract::State(state): axum::extract::State<ServiceState>,
    Json(req): Json<BatchRequest>,
) -> Json<BatchResponse> {
    let results = req
        .items
        .iter()
        .map(|item| match score_one(item, state.default_weights) {
            Ok(scores) => BatchEntry {
                scores: Some(scores),
                error: None,
            },
            Err(error) => BatchEntry {
                scores: None,
                error: Some(error),
            },
        })
        .collect();
    Json(BatchResponse { results })
}

async fn healthz() -> &'static str {
    "ok"
}

/// Build the service router. `max_body_bytes` caps request size;
/// `default_weights` applies to requests that name neither weights nor a
/// preset.
pub fn router(max_body_bytes: usize, default_weights: Option<RewardWeights>) -> Router {
    Router::new()
        .route("/v1/score", post(score))
        .route("/v1/score_batch", post(score_batch))
        .route("/healthz", get(healthz))
        .layer(DefaultBodyLimit::max(max_body_bytes))
        .with_state(ServiceState { default_weights })
}

/// Bind and serve until the task is aborted. Returns the bound address and
/// the server task handle.
pub async fn serve(
    bind: &str,
    max_body_bytes: usize,
    default_weights: Option<RewardWeights>,
) -> std::io::Result<(std::net::SocketAddr, tokio::task::JoinHandle<()>)> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    let addr = listener.local_addr()?;
    let app = router(max_body_bytes, default_weights);
    let handle = tokio::spawn(async move {
        if let Err(err) = axum::serve(listener, app).await {
            tracing::debug!(error = %err, "reward service stopped");
        }
    });
    Ok((addr, handle))
}
