use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use fieldlabel_core::export::ExportError;
use fieldlabel_core::field::FieldError;
use fieldlabel_core::labeling::LabelError;
use fieldlabel_core::mesh::MeshError;
use fieldlabel_core::metrics::MetricsError;
use fieldlabel_core::raster::RasterError;
use fieldlabel_core::scene::SceneError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    NotFound(String),
    #[error("revision conflict: request is based on revision {base}, project is at {current}")]
    Conflict { base: u64, current: u64 },
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ServiceError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Short stable name for machine consumers.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::NotFound(_) => "not_found",
            Self::Conflict { .. } => "conflict",
            Self::InvalidPose(_) => "invalid_pose",
            Self::BadRequest(_) => "bad_request",
            Self::Unprocessable(_) => "unprocessable",
            Self::Internal(_) => "internal",
            Self::Scene(_) => "scene",
            Self::Field(_) => "field",
            Self::Label(LabelError::UnknownObject(_)) => "not_found",
            Self::Label(_) => "label",
            Self::Mesh(_) => "mesh",
            Self::Export(_) => "export",
            Self::Metrics(_) => "metrics",
            Self::Raster(_) => "raster",
            Self::Io { .. } => "io",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            Self::NotFound(_) | Self::Label(LabelError::UnknownObject(_)) => StatusCode::NOT_FOUND,
            Self::Conflict { .. } => StatusCode::CONFLICT,
            Self::BadRequest(_) => StatusCode::BAD_REQUEST,
            Self::InvalidPose(_) | Self::Unprocessable(_) | Self::Label(_) | Self::Mesh(_) | Self::Field(FieldError::Invalid(_)) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            Self::Export(ExportError::MissingSensorDepth { .. } | ExportError::MissingField { .. }) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    /// One-line JSON form used on stderr and in HTTP error bodies.
    pub fn to_json(&self) -> serde_json::Value {
        let mut message = self.to_string();
        if message.contains('\n') {
            message = message.replace('\n', " ");
        }
        serde_json::json!({ "error": self.kind(), "message": message })
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(self.to_json())).into_response()
    }
}
