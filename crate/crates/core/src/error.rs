use thiserror::Error;

/// Errors produced by the samplers, solvers and statistics in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The eigensolver ran out of iterations before the off-diagonal part vanished.
    #[error("eigensolver did not converge (residual {residual:e})")]
    NumericalFailure { residual: f64 },

    #[error("eigenvalue {index} is degenerate with eigenvalue {other} (separation {separation:e})")]
    DegenerateEigenvalue {
        index: usize,
        other: usize,
        separation: f64,
    },

    #[error("Gaussian-divisible decomposition infeasible at ({row}, {col}): residual variance {residual:e}")]
    DecompositionInfeasible { row: usize, col: usize, residual: f64 },

    #[error("fixed point did not converge (last residual {residual:e})")]
    Convergence { residual: f64 },

    #[error("fixed point left the upper half plane (Im m = {imag:e})")]
    Branch { imag: f64 },

    /// Integrated density mass too far from one for a reliable quantile.
    #[error("density mass {mass} deviates from 1 by more than {tolerance:e}")]
    Accuracy { mass: f64, tolerance: f64 },

    #[error("observable arity {0} is not supported")]
    UnsupportedArity(usize),

    #[error("no data: {0}")]
    NoData(&'static str),

    #[error("trial {trial}: {source}")]
    Trial { trial: usize, source: Box<Error> },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True for errors caused by bad inputs rather than numerical breakdown.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::InvalidParameter(_) | Error::UnsupportedArity(_) | Error::NoData(_) => true,
            Error::Trial { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    pub(crate) fn in_trial(self, trial: usize) -> Self {
        match self {
            e @ Error::Trial { .. } => e,
            e => Error::Trial {
                trial,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
