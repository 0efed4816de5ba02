use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::{json, Value};
use stocktake_core::reference::ImportError;
use stocktake_core::StocktakeError;

/// An error response: `{"error": CODE, "message": text, ...details}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub details: Value,
}

impl ApiError {
    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code: "INVALID_REQUEST",
            message: message.into(),
            details: Value::Null,
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "INTERNAL",
            message: message.into(),
            details: Value::Null,
        }
    }

    pub fn unauthorized(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::UNAUTHORIZED,
            code: "UNKNOWN_TOKEN",
            message: message.into(),
            details: Value::Null,
        }
    }
}

/// Status and stable error code for every engine error.
pub fn classify(err: &StocktakeError) -> (StatusCode, &'static str) {
    use StocktakeError::*;
    match err {
        UnknownToken => (StatusCode::UNAUTHORIZED, "UNKNOWN_TOKEN"),
        Forbidden(_) => (StatusCode::FORBIDDEN, "FORBIDDEN"),
        NotAssigned(_) => (StatusCode::FORBIDDEN, "NOT_ASSIGNED"),
        NoReferenceLoaded => (StatusCode::CONFLICT, "NO_REFERENCE_LOADED"),
        SessionInProgress => (StatusCode::CONFLICT, "SESSION_IN_PROGRESS"),
        AlreadyStarted { .. } => (StatusCode::CONFLICT, "ALREADY_STARTED"),
        TaskNotStarted(_) => (StatusCode::CONFLICT, "TASK_NOT_STARTED"),
        SessionArchived(_) => (StatusCode::CONFLICT, "SESSION_ARCHIVED"),
        TaskCompleted(_) => (StatusCode::CONFLICT, "TASK_COMPLETED"),
        EventIdConflict(_) => (StatusCode::CONFLICT, "EVENT_ID_CONFLICT"),
        NotSurplus(_) => (StatusCode::CONFLICT, "NOT_SURPLUS"),
        IncompleteBatchList(_) => (StatusCode::CONFLICT, "INCOMPLETE_BATCH_LIST"),
        TasksRemaining(_) => (StatusCode::CONFLICT, "TASKS_REMAINING"),
        NotArchived(_) => (StatusCode::CONFLICT, "NOT_ARCHIVED"),
        Import(ImportError::MalformedRow { .. }) => (StatusCode::BAD_REQUEST, "MALFORMED_ROW"),
        Import(ImportError::DuplicateHuCode(_)) => (StatusCode::BAD_REQUEST, "DUPLICATE_HU_CODE"),
        Parse(_) => (StatusCode::BAD_REQUEST, "PARSE_ERROR"),
        Invalid(_) => (StatusCode::BAD_REQUEST, "INVALID_REQUEST"),
        UnknownSession(_) => (StatusCode::NOT_FOUND, "UNKNOWN_SESSION"),
        UnknownBin(_) => (StatusCode::NOT_FOUND, "UNKNOWN_BIN"),
        UnknownArchive(_) => (StatusCode::NOT_FOUND, "UNKNOWN_ARCHIVE"),
        Storage(_) => (StatusCode::SERVICE_UNAVAILABLE, "STORAGE_FAILURE"),
        Replay(_) => (StatusCode::SERVICE_UNAVAILABLE, "REPLAY_FAILURE"),
    }
}

impl From<StocktakeError> for ApiError {
    fn from(err: StocktakeError) -> Self {
        let (status, code) = classify(&err);
        let details = match &err {
            StocktakeError::IncompleteBatchList(b) => json!({
                "blocking_batches": b.blocking_batches,
                "unacknowledged_surplus": b.unacknowledged_surplus,
            }),
            StocktakeError::AlreadyStarted { bin, operator } => json!({
                "bin_code": bin,
                "assigned_operator": operator,
            }),
            StocktakeError::TasksRemaining(n) => json!({ "remaining": n }),
            StocktakeError::Import(ImportError::MalformedRow { line, .. }) => json!({ "line": line }),
            StocktakeError::Import(ImportError::DuplicateHuCode(hu)) => json!({ "hu_code": hu }),
            StocktakeError::Parse(e) => json!({ "parse_error": e }),
            _ => Value::Null,
        };
        if status.is_server_error() {
            tracing::warn!(error = %err, "request failed in storage");
        }
        ApiError {
            status,
            code,
            message: err.to_string(),
            details,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code, "message": self.message });
        if let (Value::Object(map), Value::Object(extra)) = (&mut body, self.details) {
            map.extend(extra);
        }
        (self.status, Json(body)).into_response()
    }
}
