use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use ideaspace_core::engine::EngineError;
use ideaspace_core::model::ModelError;
use serde::Serialize;
use serde_json::{json, Value};

use crate::persist::PersistError;

/// Response body wrapper: exactly one of `data` and `error` is present.
#[derive(Debug, Serialize)]
pub struct ApiEnvelope<T: Serialize> {
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
    pub detail: Value,
}

pub fn ok<T: Serialize>(data: T) -> Json<ApiEnvelope<T>> {
    Json(ApiEnvelope {
        status: "ok",
        data: Some(data),
        error: None,
    })
}

pub fn created<T: Serialize>(data: T) -> (StatusCode, Json<ApiEnvelope<T>>) {
    (StatusCode::CREATED, ok(data))
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code,
                message: message.into(),
                detail: Value::Null,
            },
        }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.body.detail = detail;
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "validation", message)
    }

    pub fn not_found(kind: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{kind} {id:?} not found"))
            .with_detail(json!({"kind": kind, "id": id}))
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }
}

impl From<ModelError> for ApiError {
    fn from(e: ModelError) -> Self {
        let message = e.to_string();
        match e {
            ModelError::Validation(_) => ApiError::new(StatusCode::BAD_REQUEST, "validation", message),
            ModelError::NotFound { kind, id } => ApiError::not_found(kind, &id),
            ModelError::Integrity(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "integrity", message),
            ModelError::Format { path, .. } => {
                ApiError::new(StatusCode::BAD_REQUEST, "format", message).with_detail(json!({ "path": path }))
            }
        }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let message = e.to_string();
        match e {
            EngineError::Validation(_) => ApiError::new(StatusCode::BAD_REQUEST, "validation", message),
            EngineError::Parse(p) => ApiError::new(StatusCode::BAD_GATEWAY, "parse", message)
                .with_detail(json!({"kind": format!("{:?}", p.kind), "raw": p.raw})),
            EngineError::Upstream(_) => ApiError::new(StatusCode::BAD_GATEWAY, "upstream", message),
            EngineError::Partial { drafts, .. } => {
                ApiError::new(StatusCode::BAD_GATEWAY, "partial", message).with_detail(json!({ "drafts": drafts }))
            }
            EngineError::Template(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "template", message),
        }
    }
}

impl From<PersistError> for ApiError {
    fn from(e: PersistError) -> Self {
        tracing::error!(error = %e, "storage failure");
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body: ApiEnvelope<()> = ApiEnvelope {
            status: "error",
            data: None,
            error: Some(self.body),
        };
        (self.status, Json(body)).into_response()
    }
}
