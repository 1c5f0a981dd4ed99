use thiserror::Error;

/// One Newton iteration as recorded in a convergence trace.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Sup-norm of the estimating function at the start of the iteration.
    pub score_norm: f64,
    /// Fraction of the full Newton step that was accepted.
    pub step_size: f64,
    pub objective: f64,
}

#[derive(Debug, Error)]
pub enum WlError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(
        "no weighted events: at least one subject with status 1 and positive weight is required"
    )]
    NoEvents,

    #[error("exp(z*beta) overflowed for subject {subject}; beta is ill-conditioned")]
    Overflow { subject: usize },

    #[error("empty weighted risk set at event time {time}")]
    EmptyRiskSet { time: f64 },

    #[error("singular information matrix; null direction {direction:?}")]
    SingularInformation { direction: Vec<f64> },

    #[error("monotone likelihood: coefficients diverge along {direction:?} after {} iterations", trace.len())]
    MonotoneLikelihood {
        direction: Vec<f64>,
        trace: Vec<IterationRecord>,
    },

    #[error("no convergence after {} iterations", trace.len())]
    NonConvergence { trace: Vec<IterationRecord> },

    #[error("stratum {stratum}: {reason}")]
    Stratum { stratum: u32, reason: String },

    #[error("sampling probability {pi} for subject {subject} is below the floor {floor}")]
    ProbabilityFloor { subject: usize, pi: f64, floor: f64 },

    #[error("logistic sampling model: {reason}")]
    Logistic {
        reason: String,
        trace: Vec<IterationRecord>,
    },

    #[error("rank-deficient regression design: {0}")]
    RankDeficient(String),

    #[error("invalid configuration at `{path}`: {reason}")]
    Config { path: String, reason: String },
}

impl WlError {
    /// Stable machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            WlError::InvalidInput(_) => "invalid_input",
            WlError::NoEvents => "no_events",
            WlError::Overflow { .. } => "overflow",
            WlError::EmptyRiskSet { .. } => "empty_risk_set",
            WlError::SingularInformation { .. } => "singular_information",
            WlError::MonotoneLikelihood { .. } => "monotone_likelihood",
            WlError::NonConvergence { .. } => "non_convergence",
            WlError::Stratum { .. } => "stratum",
            WlError::ProbabilityFloor { .. } => "probability_floor",
            WlError::Logistic { .. } => "logistic",
            WlError::RankDeficient(_) => "rank_deficient",
            WlError::Config { .. } => "config",
        }
    }

    pub(crate) fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        WlError::Config {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, WlError>;
