//! JSON HTTP API over a [`Controller`].

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use bfftrace_core::report::{export_report, ReportFormat};
use bfftrace_core::run::{RunConfig, RunState};
use bytes::Bytes;
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

use super::{ControlError, Controller};
use crate::store::{RunFilter, StoreError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Started {
    pub run_id: String,
}

impl IntoResponse for ControlError {
    fn into_response(self) -> Response {
        let status = match &self {
            ControlError::InvalidConfig(_) => StatusCode::BAD_REQUEST,
            ControlError::PortConflict(_) | ControlError::Busy | ControlError::NotReady(_) => StatusCode::CONFLICT,
            ControlError::TargetUnreachable(_) => StatusCode::BAD_GATEWAY,
            ControlError::NotFound(_) | ControlError::Store(StoreError::NotFound(_)) => StatusCode::NOT_FOUND,
            ControlError::Store(StoreError::StorageFull) => StatusCode::INSUFFICIENT_STORAGE,
            ControlError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = ApiError {
            code: self.code().to_string(),
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ControlError>;

async fn start(State(c): State<Controller>, body: Bytes) -> Result<(StatusCode, Json<Started>), ControlError> {
    let config: RunConfig =
        serde_json::from_slice(&body).map_err(|e| ControlError::InvalidConfig(format!("invalid run config: {e}")))?;
    let run_id = c.start_run(config).await?;
    Ok((StatusCode::CREATED, Json(Started { run_id })))
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    status: Option<String>,
    since: Option<u64>,
}

async fn list(State(c): State<Controller>, Query(q): Query<ListQuery>) -> ApiResult<Vec<crate::store::RunSummary>> {
    let status = match q.status.as_deref() {
        None | Some("") => None,
        Some("running") => Some(RunState::Running),
        Some("completed") => Some(RunState::Completed),
        Some("aborted") => Some(RunState::Aborted),
        Some(other) => return Err(ControlError::InvalidConfig(format!("unknown status filter `{other}`"))),
    };
    Ok(Json(c.list_runs(&RunFilter { status, since: q.since })?))
}

async fn status(State(c): State<Controller>, Path(id): Path<String>) -> ApiResult<super::RunStatus> {
    Ok(Json(c.get_status(&id)?))
}

#[derive(Debug, Deserialize)]
struct ReportQuery {
    format: Option<String>,
}

async fn report(State(c): State<Controller>, Path(id): Path<String>, Query(q): Query<ReportQuery>) -> Result<Response, ControlError> {
    let format: ReportFormat = q
        .format
        .as_deref()
        .unwrap_or("json")
        .parse()
        .map_err(ControlError::InvalidConfig)?;
    let report = c.report(&id)?;
    let content_type = match format {
        ReportFormat::Json => "application/json",
        ReportFormat::Text => "text/plain; charset=utf-8",
    };
    Ok(([(header::CONTENT_TYPE, content_type)], export_report(&report, format)).into_response())
}

async fn traces(State(c): State<Controller>, Path(id): Path<String>) -> ApiResult<bfftrace_core::correlate::TraceMap> {
    Ok(Json(c.traces(&id)?))
}

async fn graph(
    State(c): State<Controller>,
    Path((id, trace_id)): Path<(String, String)>,
) -> ApiResult<bfftrace_core::report::GraphModel> {
    Ok(Json(c.graph(&id, &trace_id)?))
}

async fn fallback() -> ControlError {
    ControlError::NotFound("route".into())
}

pub fn router(controller: Controller) -> Router {
    Router::new()
        .route("/api/runs", get(list).post(start))
        .route("/api/runs/{id}", get(status))
        .route("/api/runs/{id}/report", get(report))
        .route("/api/runs/{id}/traces", get(traces))
        .route("/api/runs/{id}/graph/{trace_id}", get(graph))
        .fallback(fallback)
        .layer(CorsLayer::permissive())
        .with_state(controller)
}
