use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("unknown problem `{0}`")]
    UnknownProblem(String),

    #[error("no analytic solution is available for problem `{0}`")]
    NoAnalyticSolution(String),

    #[error("policy mode `{0}` requires control bounds on the problem")]
    MissingBounds(String),

    #[error("componentwise projection requires separable g (diagonal R)")]
    NonDiagonalControlWeight,

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("non-finite loss in {stage} stage at iteration {iteration} (gradient norm {grad_norm:e})")]
    NonFiniteLoss {
        stage: &'static str,
        iteration: usize,
        grad_norm: f64,
    },

    #[error("integration produced a non-finite state at step {step}")]
    NonFiniteState { step: usize },
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    /// True for failures caused by the numbers themselves rather than by
    /// bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFiniteLoss { .. } | Error::NonFiniteState { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
