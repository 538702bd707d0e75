use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid correlation matrix: {0}")]
    InvalidCorrelation(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular Newton Jacobian (residual {residual:e})")]
    SingularJacobian { residual: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("gradient methods disagree: momentum {momentum:?} vs finite difference {finite_difference:?}")]
    GradientMismatch {
        momentum: Vec<f64>,
        finite_difference: Vec<f64>,
    },

    #[error("theta-scaling violated: Lambda(a) a^(-2/theta) varies by {spread:e} (relative)")]
    ScalingViolation { spread: f64 },

    #[error("B1 = {0} <= 2: moment-explosion regime, wing formula invalid")]
    MomentExplosion(f64),

    #[error("unsupported parameter: {0}")]
    Unsupported(String),

    #[error("insufficient tail data: {0} points in quantile range (need 100)")]
    InsufficientData(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Dimension(_)
                | Error::InvalidCorrelation(_)
                | Error::InvalidModel(_)
                | Error::Unsupported(_)
                | Error::Config(_)
                | Error::Json(_)
        )
    }
}
