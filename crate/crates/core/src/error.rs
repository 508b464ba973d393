use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("exponent {value} at endpoint {endpoint} is outside [0, 2)")]
    ExponentOutOfRange { endpoint: u8, value: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(
        "T*Na/A = {ratio} is not an integer, so no Nt gives dt = da; \
         the smallest Nt not below it is {smallest_nt}, adjust Na or T instead"
    )]
    IncompatibleGrid { ratio: f64, smallest_nt: usize },

    #[error("weight `{which}` evaluated outside its domain at t={t}, a={a}")]
    WeightDomain { which: &'static str, t: f64, a: f64 },

    #[error("||rho||_inf is infinite for this profile; use the truncated-domain weights")]
    InfiniteRho,

    #[error("adaptive quadrature failed to reach tolerance on [{lo}, {hi}]")]
    QuadratureDivergence { lo: f64, hi: f64 },

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("non-finite value detected at step {step}")]
    NonFinite { step: usize },

    #[error("the Hardy-Poincare chain needs k(1) > 0")]
    HardyPoincareInapplicable,

    #[error("implicit formula at t-index {t_index} needs the newborn trace history")]
    MissingTrace { t_index: usize },

    #[error("negative curvature {curvature} in the dual operator (broken duality)")]
    NegativeCurvature { curvature: f64 },

    #[error("fixed-point residual grew for {streak} consecutive iterations (last {residual})")]
    FixedPointDivergence { streak: usize, residual: f64 },

    #[error("i/o: {0}")]
    Io(String),

    #[error("malformed data: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
