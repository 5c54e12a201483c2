use thiserror::Error;

use crate::expr::{DomainError, EvalError, ParseError};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("invalid transform family: {0}")]
    InvalidTransform(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("time map is not strictly increasing near t = {t}")]
    NonMonotoneTimeMap { t: f64 },
    #[error("cannot invert transform at t = {t}: {reason}")]
    Inversion { t: f64, reason: String },
    #[error("gauge depends on control `{0}`, so its boundary offset is undefined")]
    ControlDependentGauge(String),
    #[error("transform family is not a symmetry (lagrangian residual {lagrangian:e}, dynamics residual {dynamics:e})")]
    NotInvariant { lagrangian: f64, dynamics: f64 },
    #[error("no admissible parameter in [{lo}, {hi}] (smallest endpoint mismatch {best_mismatch:e} at s = {best_s})")]
    NoAdmissibleParameter {
        lo: f64,
        hi: f64,
        best_s: f64,
        best_mismatch: f64,
    },
    #[error("unsupported integrand structure: {0}")]
    UnsupportedStructure(String),
    #[error("no extremal: {0}")]
    NoExtremal(String),
    #[error("not supported by the solver: {0}")]
    Unsupported(String),
}

impl From<DomainError> for Error {
    fn from(e: DomainError) -> Self {
        Error::Eval(EvalError::Domain(e))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
