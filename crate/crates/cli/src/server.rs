//! Review service over HTTP. All routes live under `/v1` and take and
//! return JSON.

use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use irac_kg::kg::IracGraph;
use irac_kg::review::{create_review_batch, BatchSpec, LabelSubmission, ReviewError, ReviewStore};
use irac_kg::sft::ChatTrainingRecord;
use serde::Deserialize;
use serde_json::json;

pub const TOKEN_ENV: &str = "IRAC_REVIEW_TOKEN";
const DEFAULT_PAGE: usize = 50;
const MAX_PAGE: usize = 500;

pub struct AppState {
    pub store: ReviewStore,
    /// Graphs and SFT records new batches are drawn from.
    pub graphs: Vec<IracGraph>,
    pub records: Vec<ChatTrainingRecord>,
    /// When set, every request must carry `Authorization: Bearer <token>`.
    pub token: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl ToString) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code: "invalid_request",
            message: message.to_string(),
        }
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let (status, code) = match &e {
            ReviewError::UnknownBatch(_) => (StatusCode::NOT_FOUND, "unknown_batch"),
            ReviewError::UnknownItem(_) => (StatusCode::NOT_FOUND, "unknown_item"),
            ReviewError::ClosedBatch(_) => (StatusCode::CONFLICT, "closed_batch"),
            ReviewError::InvalidLabel(_) => (StatusCode::BAD_REQUEST, "invalid_label"),
            ReviewError::InsufficientCases { .. } => (StatusCode::BAD_REQUEST, "insufficient_cases"),
            ReviewError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "io"),
        };
        if status.is_server_error() {
            log::error!("{e}");
        }
        Self {
            status,
            code,
            message: e.to_string(),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.code, "message": self.message}))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;
type Shared = State<Arc<AppState>>;

pub fn router(state: Arc<AppState>) -> Router {
    let v1 = Router::new()
        .route("/batches", get(list_batches).post(create_batch))
        .route("/batches/{id}", get(get_batch))
        .route("/batches/{id}/items", get(items))
        .route("/batches/{id}/derive", post(derive))
        .route("/batches/{id}/quality", get(quality))
        .route("/batches/{id}/record-quality", get(record_quality))
        .route("/batches/{id}/close", post(close))
        .route("/labels", post(submit_label))
        .layer(middleware::from_fn_with_state(state.clone(), auth));
    Router::new().nest("/v1", v1).with_state(state)
}

async fn auth(State(state): Shared, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let given = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(token.as_str()) {
            let body = json!({"error": "unauthorized", "message": "missing or wrong bearer token"});
            return (StatusCode::UNAUTHORIZED, Json(body)).into_response();
        }
    }
    next.run(req).await
}

async fn list_batches(State(s): Shared) -> impl IntoResponse {
    Json(s.store.list())
}

async fn create_batch(State(s): Shared, body: Result<Json<BatchSpec>, JsonRejection>) -> ApiResult<Response> {
    let Json(spec) = body?;
    let batch = create_review_batch(&s.graphs, &s.records, &spec)?;
    let (batch, created) = s.store.insert(batch)?;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(batch)).into_response())
}

async fn get_batch(State(s): Shared, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(s.store.get(&id)?).into_response())
}

#[derive(Debug, Deserialize)]
struct PageQuery {
    cursor: Option<usize>,
    limit: Option<usize>,
}

async fn items(
    State(s): Shared,
    Path(id): Path<String>,
    q: Result<Query<PageQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = q?;
    let limit = q.limit.unwrap_or(DEFAULT_PAGE).clamp(1, MAX_PAGE);
    Ok(Json(s.store.items(&id, q.cursor.unwrap_or(0), limit)?).into_response())
}

#[derive(Debug, Deserialize)]
struct LabelBody {
    batch_id: String,
    #[serde(flatten)]
    submission: LabelSubmission,
}

async fn submit_label(State(s): Shared, body: Result<Json<LabelBody>, JsonRejection>) -> ApiResult<Response> {
    let Json(body) = body?;
    if body.submission.reviewer.trim().is_empty() {
        return Err(ApiError::bad_request("reviewer must not be empty"));
    }
    let label = s.store.submit(&body.batch_id, body.submission)?;
    Ok((StatusCode::CREATED, Json(label)).into_response())
}

async fn derive(State(s): Shared, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(s.store.derive(&id)?).into_response())
}

async fn quality(State(s): Shared, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(s.store.quality(&id)?).into_response())
}

async fn record_quality(State(s): Shared, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(s.store.record_quality(&id)?).into_response())
}

async fn close(State(s): Shared, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(s.store.close(&id)?).into_response())
}

/// Serves until ctrl-c.
pub async fn serve(listen: &str, state: Arc<AppState>) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    log::info!("review service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
