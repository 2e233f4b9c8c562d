use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown kernel family `{0}`")]
    UnknownKernel(String),

    #[error("{assumption} violated: {detail}")]
    ConstraintViolation {
        assumption: &'static str,
        detail: String,
    },

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical blow-up in replica {replica} at step {step}")]
    NumericalBlowup { replica: usize, step: u64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("positivity lost at t = {time}: min density {min} (try a smaller dt or the semi_implicit stepper)")]
    PositivityLoss { time: f64, min: f64 },

    #[error("mass drift {drift:e} exceeds {limit:e}")]
    MassDrift { drift: f64, limit: f64 },

    #[error("Picard iteration did not converge in {iterations} iterations; residuals {residuals:?}")]
    NonConvergence {
        iterations: usize,
        residuals: Vec<f64>,
    },

    #[error("undersampled marginal: need at least {needed} samples, have {available}")]
    Undersampled { needed: usize, available: usize },

    #[error("cancellation identity failed: {family} residual {residual:e} at probe {probe}")]
    CancellationFailure {
        family: &'static str,
        residual: f64,
        probe: usize,
    },

    #[error("exponent overflow: max exponent {max_exponent}")]
    Overflow { max_exponent: f64 },

    #[error("budget exceeded: {0}")]
    Budget(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = core::result::Result<T, Error>;
