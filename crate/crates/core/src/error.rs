use thiserror::Error;

#[derive(Debug, Error)]
pub enum PhiError {
    #[error("lattice mismatch: {0}")]
    LatticeMismatch(String),
    #[error("cutoff {requested} exceeds lattice cutoff {available}")]
    CutoffExceeded { requested: u32, available: u32 },
    #[error("cost guard: {0}")]
    CostGuard(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("step rejected at t={t}: {reason}")]
    StepRejected { t: f64, reason: String },
    #[error("no convergence: {0}")]
    NonConvergence(String),
    #[error("provenance mismatch: {0}")]
    Provenance(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PhiError>;
