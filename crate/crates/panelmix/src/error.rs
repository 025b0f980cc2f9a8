use thiserror::Error;

/// Errors raised by the estimation and testing routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("infeasible constraints: {0}")]
    InfeasibleConstraints(String),

    #[error("component {component} became degenerate (responsibility mass {mass:e})")]
    DegenerateComponent { component: usize, mass: f64 },

    #[error("EM failed to converge in any restart (best log-likelihood {best_loglik})")]
    NonConvergence { best_loglik: f64 },

    #[error("optimization failure: {0}")]
    OptimizationFailure(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("ill-conditioned matrix (condition number {0:e})")]
    IllConditioned(f64),

    #[error("degenerate partition: {0}")]
    DegeneratePartition(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("{context}: {inner}")]
    Context {
        context: String,
        inner: Box<Error>,
    },
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            inner: Box::new(self),
        }
    }

    /// The innermost error, with any context layers stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { inner, .. } => inner.root(),
            e => e,
        }
    }

    /// True for failures of the numerical routines rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::DegenerateComponent { .. }
                | Error::NonConvergence { .. }
                | Error::OptimizationFailure(_)
                | Error::Singular(_)
                | Error::IllConditioned(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
