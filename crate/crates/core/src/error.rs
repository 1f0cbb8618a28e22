use thiserror::Error;

/// Errors raised by the mesh, discretization, solver and driver layers.
#[derive(Debug, Error)]
pub enum AfemError {
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("structural error: {0}")]
    Structure(String),
    #[error("meshes do not share a lineage: {0}")]
    Lineage(String),
    #[error("invalid problem data: {0}")]
    Problem(String),
    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),
    #[error("direct solve failed: {0}")]
    Singular(String),
    #[error("iteration diverged: {0}")]
    Divergence(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AfemError>;
