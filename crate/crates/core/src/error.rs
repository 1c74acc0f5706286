use thiserror::Error;

/// Errors produced by the reconstruction library.
#[derive(Debug, Error)]
pub enum EitError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("infeasible mesh geometry: {0}")]
    InfeasibleGeometry(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("mesh digest mismatch: expected {expected}, found {found}")]
    DigestMismatch { expected: String, found: String },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: String, reason: String },

    #[error("phantom sampling exhausted its rejection budget after {0} attempts")]
    RejectionBudget(usize),

    #[error("solver diverged at iteration {iteration}: {reason}")]
    Diverged { iteration: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl EitError {
    /// Short machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            EitError::InvalidInput(_) => "invalid_input",
            EitError::InfeasibleGeometry(_) => "infeasible_geometry",
            EitError::InvalidMesh(_) => "invalid_mesh",
            EitError::Numerical(_) => "numerical",
            EitError::DigestMismatch { .. } => "digest_mismatch",
            EitError::Malformed { .. } => "malformed",
            EitError::RejectionBudget(_) => "rejection_budget",
            EitError::Diverged { .. } => "diverged",
            EitError::Io(_) => "io",
            EitError::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, EitError>;
