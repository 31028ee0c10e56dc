use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("operands live on different Hilbert-space layouts")]
    LayoutMismatch,

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("operator is not Hermitian (max deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("layout lacks level {0}")]
    MissingLevel(&'static str),

    #[error("channel unavailable: {0}")]
    ChannelUnavailable(&'static str),

    #[error("invalid parameter `{field}`: {constraint}")]
    InvalidParameter { field: String, constraint: String },

    #[error("parameter regime error: {0}")]
    Regime(String),

    #[error("no pumping: {0}")]
    NoPumping(&'static str),

    #[error("invalid density state: {0}")]
    InvalidState(String),

    #[error("step size underflow at t = {t:.6e} s (h = {h:.3e} s)")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("non-finite entries in state at t = {t:.6e} s")]
    NonFinite { t: f64 },

    #[error("positivity violated at t = {t:.6e} s: minimum eigenvalue {min_eigenvalue:.3e}")]
    PositivityViolation { t: f64, min_eigenvalue: f64 },

    #[error("trace drifted by {drift:.3e} at t = {t:.6e} s")]
    TraceDrift { t: f64, drift: f64 },

    #[error("generator is time dependent; a static generator is required")]
    TimeDependent,

    #[error("degenerate null space (multiplicity {multiplicity})")]
    DegenerateNullSpace { multiplicity: usize },

    #[error("empty averaging window: {0}")]
    EmptyWindow(String),

    #[error("unknown channel or ablation `{0}`")]
    UnknownChannel(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn param(field: impl Into<String>, constraint: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            constraint: constraint.into(),
        }
    }

    /// True for errors raised by the numerical pipeline rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::StepSizeUnderflow { .. }
                | Error::NonFinite { .. }
                | Error::PositivityViolation { .. }
                | Error::TraceDrift { .. }
                | Error::DegenerateNullSpace { .. }
                | Error::NoPumping(_)
                | Error::Regime(_)
        )
    }
}
