use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use crate::{Command, LineHandle, ScadaError};

struct ApiError(StatusCode, String);

impl From<ScadaError> for ApiError {
    fn from(e: ScadaError) -> Self {
        let code = match &e {
            ScadaError::Conflict(_) => StatusCode::CONFLICT,
            ScadaError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ScadaError::NoDetector | ScadaError::Shutdown => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self(code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self(StatusCode::UNPROCESSABLE_ENTITY, e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self(StatusCode::UNPROCESSABLE_ENTITY, e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpeedBody {
    mm_per_s: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ThresholdBody {
    conf: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Since {
    since: Option<u64>,
}

async fn run(line: &LineHandle, c: Command) -> ApiResult<Response> {
    Ok(Json(line.command(c).await?).into_response())
}

async fn start(State(line): State<LineHandle>) -> ApiResult<Response> {
    run(&line, Command::Start).await
}

async fn stop(State(line): State<LineHandle>) -> ApiResult<Response> {
    run(&line, Command::Stop).await
}

async fn speed(State(line): State<LineHandle>, body: Result<Json<SpeedBody>, JsonRejection>) -> ApiResult<Response> {
    run(&line, Command::SetSpeed(body?.0.mm_per_s)).await
}

async fn threshold(State(line): State<LineHandle>, body: Result<Json<ThresholdBody>, JsonRejection>) -> ApiResult<Response> {
    // Without a detector the endpoint is unavailable whatever the body says.
    if !line.state().inspection {
        return Err(ScadaError::NoDetector.into());
    }
    run(&line, Command::SetThreshold(body?.0.conf)).await
}

async fn state(State(line): State<LineHandle>) -> Response {
    Json(line.state()).into_response()
}

async fn latest_strip(State(line): State<LineHandle>) -> ApiResult<Response> {
    match line.latest_strip_png() {
        Some(png) => Ok(([(header::CONTENT_TYPE, "image/png")], png.as_ref().clone()).into_response()),
        None => Err(ApiError(StatusCode::NOT_FOUND, "no strip captured yet".into())),
    }
}

async fn events(State(line): State<LineHandle>, q: Result<Query<Since>, QueryRejection>) -> ApiResult<Response> {
    Ok(Json(line.events_since(q?.0.since)).into_response())
}

async fn stats(State(line): State<LineHandle>) -> ApiResult<Response> {
    match line.stats() {
        Some(s) => Ok(Json(s).into_response()),
        None => Err(ScadaError::NoDetector.into()),
    }
}

pub fn router(line: LineHandle) -> Router {
    Router::new()
        .route("/api/line/start", post(start))
        .route("/api/line/stop", post(stop))
        .route("/api/line/speed", put(speed))
        .route("/api/line/state", get(state))
        .route("/api/strip/latest", get(latest_strip))
        .route("/api/events", get(events))
        .route("/api/detector/threshold", put(threshold))
        .route("/api/stats", get(stats))
        .with_state(line)
}

/// Serves the API on `0.0.0.0:port` until the process is interrupted.
pub async fn serve(line: LineHandle, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    axum::serve(listener, router(line)).await
}
