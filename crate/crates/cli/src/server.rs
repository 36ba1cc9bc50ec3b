//! Local JSON API consumed by the web console.
//!
//! Every answer carries its validation and usage reports; the handlers never
//! return raw model text on its own.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fleetlens_core::cluster::{extract_features, BehaviorLabel, BehaviorModel};
use fleetlens_core::gateway::{Gateway, GatewayError};
use fleetlens_core::geo::LandmarkDirectory;
use fleetlens_core::pipeline::{Analyst, Answer, PipelineError};
use fleetlens_core::planner::{PlannerConfig, PlannerError};
use fleetlens_core::store::{StoreKey, SummaryStore};
use fleetlens_core::telemetry::FixQuality;
use fleetlens_core::validate::ValidatorConfig;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::filter::FilterArgs;

/// Shared, read-only service state. The gateway's cache is the only thing
/// that changes between requests.
#[derive(Clone)]
pub struct AppState {
    pub store: Arc<dyn SummaryStore>,
    pub model: Arc<BehaviorModel>,
    pub landmarks: Arc<LandmarkDirectory>,
    pub planner: Arc<PlannerConfig>,
    pub validator: Arc<ValidatorConfig>,
    pub gateway: Arc<Gateway>,
}

impl AppState {
    fn analyst(&self) -> Analyst<'_> {
        Analyst {
            store: self.store.as_ref(),
            model: &self.model,
            landmarks: &self.landmarks,
            planner: &self.planner,
            validator: &self.validator,
            gateway: &self.gateway,
        }
    }
}

/// One stored window as the map shows it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiEvent {
    /// `<vehicle_id>@<window_start>`; pass back to `POST /micro`.
    pub key: String,
    pub vehicle_id: String,
    pub window_start: i64,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
    pub gps_quality: FixQuality,
    /// Assigned by the currently loaded model.
    pub label: BehaviorLabel,
    pub instability: f64,
    pub extreme_event_magnitude: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub label: BehaviorLabel,
    pub extreme_event_magnitude: f64,
    pub instability: f64,
    pub count: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSummary {
    pub version: u32,
    pub k: usize,
    pub objective: f64,
    /// In label order, calmest first.
    pub clusters: Vec<ClusterSummary>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct QueryRequest {
    pub text: String,
}

#[derive(Clone, Debug, Deserialize)]
pub struct MicroRequest {
    pub key: String,
    #[serde(default)]
    pub question: Option<String>,
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    NotFound(String),
    UnknownIntent(Vec<String>),
    Unprocessable(String),
    Backend(GatewayError),
    Internal(String),
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Planner(PlannerError::UnknownIntent { supported }) => ApiError::UnknownIntent(supported),
            PipelineError::Planner(e @ (PlannerError::EmptyQuery | PlannerError::MissingEvent)) => {
                ApiError::BadRequest(e.to_string())
            }
            PipelineError::Planner(e @ PlannerError::EventNotFound(_)) => ApiError::NotFound(e.to_string()),
            PipelineError::Planner(e @ (PlannerError::UnknownLandmark(_) | PlannerError::EventNotLocated(_))) => {
                ApiError::Unprocessable(e.to_string())
            }
            PipelineError::Gateway(e) => ApiError::Backend(e),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, json!({ "error": m })),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, json!({ "error": m })),
            ApiError::UnknownIntent(supported) => (
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({ "error": "unknown intent", "supported": supported }),
            ),
            ApiError::Unprocessable(m) => (StatusCode::UNPROCESSABLE_ENTITY, json!({ "error": m })),
            ApiError::Backend(e) => {
                let mut body = json!({ "error": e.to_string() });
                if let GatewayError::Backend { backend, attempts, source } = &e {
                    body["backend"] = json!(backend);
                    body["attempts"] = json!(attempts);
                    body["detail"] = json!(source.to_string());
                }
                (StatusCode::BAD_GATEWAY, body)
            }
            ApiError::Internal(m) => {
                tracing::error!(error = %m, "request failed");
                (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": m }))
            }
        };
        (status, Json(body)).into_response()
    }
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

async fn events(State(state): State<AppState>, Query(args): Query<FilterArgs>) -> Result<Json<Vec<ApiEvent>>, ApiError> {
    let mut filter = args.to_filter().map_err(|e| ApiError::BadRequest(e.to_string()))?;
    // Labels come from the loaded model, not whatever set the store last recorded.
    let label = filter.label.take();
    blocking(move || {
        let rows = state.store.scan(&filter).map_err(|e| ApiError::Internal(e.to_string()))?;
        Ok(Json(
            rows.into_iter()
                .filter_map(|r| {
                    let s = r.summary;
                    let f = extract_features(&s);
                    let assigned = state.model.assign(&f);
                    if label.is_some_and(|l| l != assigned) {
                        return None;
                    }
                    let at = s.located(FixQuality::Fix2d);
                    Some(ApiEvent {
                        key: StoreKey::of(&s).to_string(),
                        lat: at.map(|p| p.lat),
                        lon: at.map(|p| p.lon),
                        gps_quality: s.gps_quality,
                        label: assigned,
                        instability: f.instability,
                        extreme_event_magnitude: f.extreme_event_magnitude,
                        vehicle_id: s.vehicle_id,
                        window_start: s.window_start,
                    })
                })
                .collect(),
        ))
    })
    .await
}

async fn query(State(state): State<AppState>, Json(req): Json<QueryRequest>) -> Result<Json<Answer>, ApiError> {
    blocking(move || Ok(Json(state.analyst().ask(&req.text)?))).await
}

async fn micro(State(state): State<AppState>, Json(req): Json<MicroRequest>) -> Result<Json<Answer>, ApiError> {
    let key: StoreKey = req.key.parse().map_err(|e: fleetlens_core::store::StoreError| ApiError::BadRequest(e.to_string()))?;
    blocking(move || Ok(Json(state.analyst().explain(key, req.question.as_deref())?))).await
}

pub fn model_summary(model: &BehaviorModel) -> ModelSummary {
    let centroids = model.centroid_features();
    let mut clusters: Vec<ClusterSummary> = (0..model.k)
        .map(|i| ClusterSummary {
            label: model.label_of(i),
            extreme_event_magnitude: centroids[i].extreme_event_magnitude,
            instability: centroids[i].instability,
            count: model.counts[i],
        })
        .collect();
    clusters.sort_by_key(|c| c.label);
    ModelSummary {
        version: model.version,
        k: model.k,
        objective: model.objective,
        clusters,
    }
}

async fn clusters(State(state): State<AppState>) -> Json<ModelSummary> {
    Json(model_summary(&state.model))
}

/// The API routes, plus the console's static files when a directory is given.
pub fn router(state: AppState, console_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/events", get(events))
        .route("/query", post(query))
        .route("/micro", post(micro))
        .route("/clusters", get(clusters))
        .with_state(state);
    match console_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}
