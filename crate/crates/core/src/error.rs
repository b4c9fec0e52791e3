use crate::expr::{EvalError, ParseError};

/// Errors raised by field evaluation and the geometric operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    /// Unbound variable or non-finite value during evaluation.
    #[error(transparent)]
    Eval(#[from] EvalError),
    /// A point (or finite-difference stencil point) left the region.
    #[error("point {point:?} is outside the region")]
    DomainExit { point: Vec<f64> },
    #[error("singular frame: |det| = {det:e}")]
    SingularFrame { det: f64 },
    #[error("singular jacobian: |det| = {det:e}")]
    SingularJacobian { det: f64 },
    #[error("{0} integration steps requested, at least 8 are required")]
    StepCountTooSmall(usize),
    /// Staircase transports disagree: the connection is not flat there.
    #[error("path-independence residual {residual:e} exceeds {limit:e}")]
    NotFlat { residual: f64, limit: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid path: {0}")]
    InvalidPath(String),
    /// The operation needs a vector-bundle (fibre-linear) morphism.
    #[error("morphism is not fibre-linear")]
    NotFibreLinear,
}

impl Error {
    pub fn non_finite(op: impl Into<String>) -> Self {
        Error::Eval(EvalError::NonFinite { op: op.into() })
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
