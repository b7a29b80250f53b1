use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty intention path")]
    EmptyIntentionPath,

    #[error("{what} out of bounds: {detail}")]
    OutOfBounds { what: &'static str, detail: String },

    #[error("grid spec mismatch: {0}")]
    SpecMismatch(String),

    #[error("shape mismatch in layer `{layer}`: {detail}")]
    Shape { layer: String, detail: String },

    #[error("no forward cache for layer `{0}`")]
    MissingCache(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("infeasible maneuver: {0}")]
    Infeasible(String),

    #[error("malformed field `{field}`: {detail}")]
    Format { field: String, detail: String },

    #[error("curvature undefined at near-zero speed")]
    CurvatureUndefined,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("empty label")]
    EmptyLabel,

    #[error("no reports to aggregate")]
    EmptyReports,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("planner failed: {0}")]
    Planner(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            detail: detail.into(),
        }
    }
}
