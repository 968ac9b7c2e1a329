use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("birth rates are not constant: rate at index {index} is {value}, expected {expected}")]
    NonConstantBirths {
        index: usize,
        value: f64,
        expected: f64,
    },

    #[error("stationary normalizer is not representable at working precision")]
    DegenerateNormalizer,

    #[error("Mills ratio overflows at u = {0}")]
    MillsOverflow(f64),

    #[error("quadrature did not converge on [{a}, {b}]: estimated error {achieved:e} after {intervals} subintervals")]
    QuadratureNonConvergence {
        a: f64,
        b: f64,
        achieved: f64,
        intervals: usize,
    },

    #[error("|beta| = {0:e} is below the switch threshold; use the critical branch")]
    CriticalBeta(f64),

    #[error("simulation produced no usable output: {0}")]
    DegenerateEstimate(String),

    #[error("non-finite intermediate value in {0}")]
    NonFinite(&'static str),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
