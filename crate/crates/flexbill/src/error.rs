use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the library. Pure audit routines report violations as
/// data instead of returning these.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: expected length {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{what}: index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{context} did not converge after {iterations} iterations (residual {residual:.3e})")]
    Unconverged {
        context: &'static str,
        iterations: usize,
        residual: f64,
        /// Best iterate found so far, row-major, when one exists.
        iterate: Option<Vec<f64>>,
    },

    #[error(
        "cost constraint unreachable: cost {cost} > c_ref {c_ref} even at lambda {lambda_max}"
    )]
    ConstraintUnreachable {
        lambda_max: f64,
        cost: f64,
        c_ref: f64,
    },

    #[error("all annealing steps failed to solve an equilibrium")]
    AllStepsInvalid,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
