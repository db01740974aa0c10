use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate label model: F_kappa vanishes (value {0:e})")]
    DegenerateModel(f64),

    #[error("activation is purely linear (gamma_star^2 = {0:e})")]
    PurelyLinearActivation(f64),

    #[error("numeric consistency violated: {0}")]
    NumericConsistency(String),

    #[error("psi = {psi} is outside the solver domain (psi_down = {psi_down})")]
    Domain { psi: f64, psi_down: f64 },

    #[error("psi = {psi} is at or below the interpolation threshold {psi_star0}")]
    BelowThreshold { psi: f64, psi_star0: f64 },

    #[error("no interior minimum found: {0}")]
    NoInteriorMinimum(String),

    #[error("inner minimizer reached the boundary of the unit disk ({0:e} from it)")]
    BoundaryDegeneracy(f64),

    #[error("solver failed: {0}")]
    SolverFailure(String),

    #[error("data are not linearly separable (margin upper bound {0:e})")]
    NonSeparable(f64),

    #[error("zero-norm direction")]
    ZeroNorm,
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
