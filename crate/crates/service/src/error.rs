use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Request};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Error body: `{"error": {"code": ..., "message": ..., "line": ...}}`.
#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub line: Option<u64>,
}

#[derive(Serialize)]
struct Body<'a> {
    error: Detail<'a>,
}

#[derive(Serialize)]
struct Detail<'a> {
    code: &'a str,
    message: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    line: Option<u64>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            line: None,
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn not_found(what: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} not found"))
    }

    pub fn conflict(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }

    pub fn not_configured(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "not_configured", message)
    }

    pub fn upstream(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_GATEWAY, "upstream_error", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({}): {}", self.status, self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<burrow::Error> for ApiError {
    fn from(err: burrow::Error) -> Self {
        use burrow::Error as E;
        let message = err.to_string();
        match err {
            E::Dimension { .. } => Self::new(StatusCode::BAD_REQUEST, "dimension_mismatch", message),
            E::DegenerateVector(_) | E::InvalidVector(_) => Self::new(StatusCode::BAD_REQUEST, "invalid_vector", message),
            E::Argument(_) => Self::bad_request(message),
            E::InvalidConfig(_) => Self::new(StatusCode::BAD_REQUEST, "invalid_config", message),
            E::DuplicateKey(_) => Self::conflict("duplicate_key", message),
            E::EmptyIndex => Self::conflict("empty_collection", message),
            E::Parse { line, .. } => Self {
                line: Some(line),
                ..Self::new(StatusCode::BAD_REQUEST, "parse_error", message)
            },
            E::Version { .. } => Self::new(StatusCode::BAD_REQUEST, "unsupported_version", message),
            E::SnapshotCorruption(_) => Self::new(StatusCode::BAD_REQUEST, "corrupt_snapshot", message),
            E::StoreSchema(_) => Self::new(StatusCode::BAD_REQUEST, "schema_mismatch", message),
            E::GraphCorruption(_) | E::Storage(_) | E::Io(_) | E::IncompleteBuild(_) => Self::internal(message),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = self.code, message = %self.message, "request failed");
        }
        let body = Body {
            error: Detail {
                code: self.code,
                message: &self.message,
                line: self.line,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

/// `Json` extractor whose rejections use the service's error body.
pub struct ApiJson<T>(pub T);

impl<S, T> FromRequest<S> for ApiJson<T>
where
    T: DeserializeOwned,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(value)) => Ok(Self(value)),
            Err(rejection) => Err(rejection_error(rejection)),
        }
    }
}

fn rejection_error(rejection: JsonRejection) -> ApiError {
    let status = match rejection.status() {
        // malformed or mistyped bodies are all plain client errors here
        StatusCode::UNPROCESSABLE_ENTITY => StatusCode::BAD_REQUEST,
        other => other,
    };
    ApiError::new(status, "invalid_request", rejection.body_text())
}
