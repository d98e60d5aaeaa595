use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use tfus_core::{Error, ErrorClass, Stage};

/// Wire form of every error response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub stage: Option<Stage>,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, stage: Option<Stage>, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code: code.into(),
                stage,
                message: message.into(),
            },
        }
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", None, format!("no {what} with id {id:?}"))
    }

    pub fn validation(stage: Option<Stage>, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "validation", stage, message)
    }

    pub fn not_available(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "not_available", None, message)
    }

    pub fn queue_full(capacity: usize) -> Self {
        Self::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "queue_full",
            Some(Stage::Simulate),
            format!("simulation queue is full ({capacity} jobs)"),
        )
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", None, message)
    }

    /// Map a core error, using `default_stage` when it carries no stage label.
    pub fn from_core(e: &Error, default_stage: Option<Stage>) -> Self {
        let stage = e.stage().or(default_stage);
        let (status, code) = match e.root().class() {
            ErrorClass::Validation => (StatusCode::BAD_REQUEST, "validation"),
            ErrorClass::Io => (StatusCode::UNPROCESSABLE_ENTITY, "io"),
            ErrorClass::Numerical => (StatusCode::UNPROCESSABLE_ENTITY, "numerical"),
        };
        Self::new(status, code, stage, e.root().to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
