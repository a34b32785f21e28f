use thiserror::Error;

/// Errors raised while building, analysing, or estimating with a structural causal model.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("cycle detected among endogenous variables: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("variable `{0}` is declared more than once")]
    DuplicateVariable(String),

    #[error("variable `{0}` has no exogenous noise term")]
    MissingNoiseTerm(String),

    #[error("noise `{noise}` must appear exactly once in exactly one equation ({detail})")]
    NoiseReuse { noise: String, detail: String },

    #[error("conflicting roles: {0}")]
    RoleConflict(String),

    #[error("invalid noise distribution: {0}")]
    InvalidDistribution(String),

    #[error("domain error while evaluating `{0}`")]
    DomainError(String),

    #[error("structural equation of `{variable}` is not invertible in its noise: {reason}")]
    NotInvertible { variable: String, reason: String },

    #[error("no noise value makes `{variable}` equal {target}")]
    NoRoot { variable: String, target: f64 },

    #[error("MAP optimisation did not converge after {iterations} iterations (|grad|_inf = {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },

    #[error("negative Hessian at the MAP estimate is not positive definite")]
    NotPositiveDefinite,

    #[error("non-finite Hessian entry at ({0}, {1})")]
    NonFiniteEntry(usize, usize),

    #[error("importance weights are degenerate (n_eff = {n_eff})")]
    DegenerateWeights { n_eff: f64 },

    #[error("observed mediator(s) between treatment and outcome: {}", .0.join(", "))]
    MediatorPresent(Vec<String>),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("bad model parameters: {0}")]
    BadParams(String),

    #[error("group `{0}` is empty")]
    EmptyGroup(String),

    #[error("graph has {0} nodes; at most 128 are supported")]
    GraphTooLarge(usize),

    #[error("invalid model specification: {0}")]
    Spec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DomainError(_)
                | Error::NotInvertible { .. }
                | Error::NoRoot { .. }
                | Error::NonConvergence { .. }
                | Error::NotPositiveDefinite
                | Error::NonFiniteEntry(..)
                | Error::DegenerateWeights { .. }
                | Error::MediatorPresent(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
