// SPDX-License-Identifier: MIT OR Apache-2.0

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Precondition(String),
    #[error("no session `{0}`")]
    NotFound(String),
    #[error("replay failed: {0}")]
    Replay(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl ServiceError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::Invalid { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Conflict(_) | ServiceError::Precondition(_) => StatusCode::CONFLICT,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<pbos_core::Error> for ServiceError {
    fn from(e: pbos_core::Error) -> Self {
        use pbos_core::Error as E;
        match e {
            E::InvalidParameter { field, reason } => Self::Invalid { field, message: reason },
            E::Empty(f) => Self::invalid(f, "must not be empty"),
            E::Unsorted(f) => Self::invalid(f, "must be sorted"),
            E::SessionStopped(m) => Self::Conflict(format!("session has already stopped ({m})")),
            E::Precondition(m) => Self::Precondition(m),
        }
    }
}

#[derive(Serialize)]
struct Body<'a> {
    error: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<&'a str>,
    message: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let kind = match &self {
            ServiceError::Invalid { .. } => "invalid",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::Precondition(_) => "precondition",
            ServiceError::NotFound(_) => "not_found",
            _ => "internal",
        };
        let field = match &self {
            ServiceError::Invalid { field, .. } => Some(field.as_str()),
            _ => None,
        };
        if self.status().is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        let body = Body {
            error: kind,
            field,
            message: self.to_string(),
        };
        (self.status(), Json(body)).into_response()
    }
}
