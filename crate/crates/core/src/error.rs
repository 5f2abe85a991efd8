use thiserror::Error;

use crate::model::RequestId;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid instance layout: {0}")]
    Layout(String),
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error("timetable bands overlap: [{0}, {1}] and [{2}, {3}]")]
    OverlappingBands(i64, i64, i64, i64),
    #[error("{vertices} vertices exceed the vertex budget of {budget}")]
    VertexBudget { vertices: usize, budget: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot access {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed instance at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("infeasible request {request}: {reason}")]
    InfeasibleRequest { request: RequestId, reason: String },
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("a reference emission is required when the reduction target is positive")]
    MissingGamma,
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("no scenarios given")]
    NoScenarios,
    #[error("scenario probabilities sum to {0}, expected 1")]
    Probability(f64),
    #[error("coverage must lie in (0, 1], got {0}")]
    Coverage(f64),
    #[error("too many configurations for exhaustive search: {0}")]
    TooManyConfigs(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}
