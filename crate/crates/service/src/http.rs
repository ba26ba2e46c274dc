//! JSON endpoints.
//!
//! | method | path | body / result |
//! |---|---|---|
//! | POST | `/sessions` | optional [`SessionConfig`] → [`Created`] (201) |
//! | GET | `/sessions/{id}` | full [`SessionRecord`] |
//! | GET | `/sessions/{id}/next` | [`Next`] |
//! | POST | `/sessions/{id}/responses` | [`SubmitRequest`] → [`SubmitAck`] |
//! | POST | `/sessions/{id}/fit` | [`WeightsView`] |
//! | GET | `/sessions/{id}/weights` | [`WeightsView`] |
//! | GET | `/sessions/{id}/report` | [`ReportView`] |
//!
//! Errors are `{"error": message, "code": kind}` with 404 for unknown
//! sessions or scenarios, 409 for requests that conflict with session state
//! (duplicates, wrong phase, not yet delivered or fitted), 422 for invalid
//! input and 500 for storage failures.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;

use crate::service::{Service, ServiceError, SubmitRequest};
use crate::session::{SessionConfig, SessionError};

#[derive(Serialize)]
struct ErrorBody {
    error: String,
    code: &'static str,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        use SessionError as S;
        let (status, code) = match &self {
            ServiceError::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            ServiceError::Session(S::UnknownScenario(_)) => (StatusCode::NOT_FOUND, "unknown_scenario"),
            ServiceError::Session(S::NotDelivered(_)) => (StatusCode::CONFLICT, "not_delivered"),
            ServiceError::Session(S::AlreadyDelivered(_)) => (StatusCode::CONFLICT, "already_delivered"),
            ServiceError::Session(S::Duplicate(_)) => (StatusCode::CONFLICT, "duplicate_response"),
            ServiceError::Session(S::WrongPhase { .. }) => (StatusCode::CONFLICT, "wrong_phase"),
            ServiceError::Session(S::NotFitted) => (StatusCode::CONFLICT, "not_fitted"),
            ServiceError::Session(S::Invalid(_)) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid"),
            ServiceError::Session(S::Core(e)) if e.is_validation() => (StatusCode::UNPROCESSABLE_ENTITY, "invalid"),
            ServiceError::Session(S::Core(_)) | ServiceError::Store(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
            ServiceError::Invariant(_) => (StatusCode::INTERNAL_SERVER_ERROR, "invariant"),
        };
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (status, Json(ErrorBody { error: self.to_string(), code })).into_response()
    }
}

fn bad_json(e: serde_json::Error) -> Response {
    let body = ErrorBody { error: format!("invalid JSON body: {e}"), code: "invalid" };
    (StatusCode::UNPROCESSABLE_ENTITY, Json(body)).into_response()
}

/// Runs blocking session work off the async workers.
async fn blocking<T, F>(svc: Arc<Service>, f: F) -> Response
where
    T: Serialize + Send + 'static,
    F: FnOnce(&Service) -> Result<T, ServiceError> + Send + 'static,
{
    match tokio::task::spawn_blocking(move || f(&svc)).await {
        Ok(Ok(v)) => Json(v).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => {
            tracing::error!(error = %e, "worker panicked");
            StatusCode::INTERNAL_SERVER_ERROR.into_response()
        }
    }
}

async fn create(State(svc): State<Arc<Service>>, body: Bytes) -> Response {
    let config = if body.iter().all(u8::is_ascii_whitespace) {
        SessionConfig::default()
    } else {
        match serde_json::from_slice(&body) {
            Ok(c) => c,
            Err(e) => return bad_json(e),
        }
    };
    let mut resp = blocking(svc, move |s| s.create(config)).await;
    if resp.status() == StatusCode::OK {
        *resp.status_mut() = StatusCode::CREATED;
    }
    resp
}

async fn record(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Response {
    blocking(svc, move |s| s.record(&id)).await
}

async fn next(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Response {
    blocking(svc, move |s| s.next(&id)).await
}

async fn respond(State(svc): State<Arc<Service>>, Path(id): Path<String>, body: Bytes) -> Response {
    let req: SubmitRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return bad_json(e),
    };
    blocking(svc, move |s| s.submit(&id, req)).await
}

async fn fit(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Response {
    blocking(svc, move |s| s.fit(&id)).await
}

async fn weights(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Response {
    blocking(svc, move |s| s.weights(&id)).await
}

async fn report(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Response {
    blocking(svc, move |s| s.report(&id)).await
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(record))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/responses", post(respond))
        .route("/sessions/{id}/fit", post(fit))
        .route("/sessions/{id}/weights", get(weights))
        .route("/sessions/{id}/report", get(report))
        .with_state(svc)
}
