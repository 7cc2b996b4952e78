use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is singular or ill-conditioned (condition estimate {condition:e})")]
    SingularMatrix { condition: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("model is unstable: load {rho} >= 1")]
    Unstable { rho: f64 },

    #[error("no bottleneck: every node has zero total arrival rate")]
    NoBottleneck,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("state space too large: {0}")]
    StateSpaceTooLarge(String),

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("model file error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("simulation invariant violated: {0}")]
    Invariant(String),

    #[error("unknown estimator `{0}`")]
    UnknownEstimator(String),
}

impl Error {
    /// Numeric failures as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::SingularMatrix { .. }
                | Error::NonFinite(_)
                | Error::StateSpaceTooLarge(_)
                | Error::Invariant(_)
        )
    }
}
