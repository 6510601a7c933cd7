use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Every variant maps to a stable `kind()` string used in the CLI error
/// records.
#[derive(Debug, Error)]
pub enum KamError {
    #[error("resonance detected: |k.omega| = {divisor:e} for k = {k:?}")]
    ResonanceDetected { k: Vec<i64>, divisor: f64 },

    #[error("x = {x} is below the admissible threshold Psi(1) = {psi1}")]
    BelowThreshold { x: f64, psi1: f64 },

    #[error("construction failed: {0}")]
    ConstructionFailed(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("state leaves the domain: |I| = {norm} > {radius}")]
    DomainExceeded { norm: f64, radius: f64 },

    #[error(
        "implicit step did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NonConvergentStep { iterations: usize, residual: f64 },

    #[error("averaged matrix A0 is degenerate (condition number {condition:e})")]
    KolmogorovDegenerate { condition: f64 },

    #[error("scaling state mismatch: cannot apply {direction} to a Hamiltonian in state {state}")]
    StateMismatch { direction: String, state: String },

    #[error("mu = {mu} exceeds the configured threshold {threshold}")]
    MuTooLarge { mu: f64, threshold: f64 },

    #[error("Lie series tail {tail:e} above tolerance at order {order}")]
    TailNotConverged { order: usize, tail: f64 },

    #[error("Newton iteration did not converge: defect {defect:e} after {iterations} iterations")]
    NonConvergence { iterations: usize, defect: f64 },

    #[error("small divisor breakdown: |k.Omega| = {divisor:e} below {bound:e} for k = {k:?}")]
    SmallDivisorBreakdown {
        k: Vec<i64>,
        divisor: f64,
        bound: f64,
    },

    #[error("torus outside the certified image: margin {margin} below {required}")]
    OutsideImage { margin: f64, required: f64 },

    #[error("gate failed: {0}")]
    GateFailed(String),

    #[error("insufficient span for fit: {0}")]
    InsufficientSpan(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl KamError {
    pub fn kind(&self) -> &'static str {
        match self {
            KamError::ResonanceDetected { .. } => "ResonanceDetected",
            KamError::BelowThreshold { .. } => "BelowThreshold",
            KamError::ConstructionFailed(_) => "ConstructionFailed",
            KamError::InvalidParameter(_) => "InvalidParameter",
            KamError::DomainExceeded { .. } => "DomainExceeded",
            KamError::NonConvergentStep { .. } => "NonConvergentStep",
            KamError::KolmogorovDegenerate { .. } => "KolmogorovDegenerate",
            KamError::StateMismatch { .. } => "StateMismatch",
            KamError::MuTooLarge { .. } => "MuTooLarge",
            KamError::TailNotConverged { .. } => "TailNotConverged",
            KamError::NonConvergence { .. } => "NonConvergence",
            KamError::SmallDivisorBreakdown { .. } => "SmallDivisorBreakdown",
            KamError::OutsideImage { .. } => "OutsideImage",
            KamError::GateFailed(_) => "GateFailed",
            KamError::InsufficientSpan(_) => "InsufficientSpan",
            KamError::Parse(_) => "Parse",
            KamError::Io(_) => "Io",
        }
    }
}

impl From<serde_json::Error> for KamError {
    fn from(e: serde_json::Error) -> Self {
        KamError::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, KamError>;
