use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LagoError {
    #[error("separation detected: a coefficient exceeded {limit} in magnitude")]
    Separation { limit: f64 },
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("iteration did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("threshold {threshold} is not reachable within the bounds (best achievable {best})")]
    Infeasible { threshold: f64, best: f64 },
    #[error("no threshold satisfies the power constraint within the bounds")]
    NoThreshold,
    #[error("test statistic has zero variance")]
    DegenerateVariance,
    #[error("covariance block is singular")]
    SingularCovariance,
    #[error("expected stage {expected}, got stage {got}")]
    OutOfOrderStage { expected: usize, got: usize },
    #[error("trial is already complete")]
    TrialComplete,
    #[error("invalid input: {0}")]
    Invalid(String),
}

impl LagoError {
    /// True for errors caused by malformed or inconsistent input rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            LagoError::Invalid(_) | LagoError::OutOfOrderStage { .. } | LagoError::TrialComplete
        )
    }
}

pub type Result<T> = std::result::Result<T, LagoError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(LagoError::Invalid(msg.into()))
}
