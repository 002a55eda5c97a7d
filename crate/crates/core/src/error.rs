use thiserror::Error;

use crate::simulator::SimStats;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside its admissible range.
    #[error("invalid `{field}`: {reason}")]
    Validation { field: &'static str, reason: String },

    /// A linear solve failed or its residual is too large.
    #[error(
        "linear solve failed for q={q}, r={r}, theta={theta}, n={n} (residual {residual:e})"
    )]
    Numerical {
        q: f64,
        r: f64,
        theta: f64,
        n: usize,
        residual: f64,
    },

    /// Parameters fall outside the region where the Markov model is defined.
    #[error("model domain: {0}")]
    Domain(String),

    /// The primary user's on periods would not fit between arrivals.
    #[error("unstable system: t_col = {t_col} must be below t_int - t_pac = {limit}")]
    Unstable { t_col: f64, limit: f64 },

    /// No point of the search domain satisfies the collision constraint.
    #[error("no feasible protocol: T_col <= {gamma} unreachable (minimum achievable {min_t_col})")]
    Infeasible { gamma: f64, min_t_col: f64 },

    /// Every point of the search grid violates the stability condition.
    #[error("every grid point is unstable")]
    NoStablePoint,

    /// The primary queue grew past the configured bound during a simulation.
    #[error("simulation became unstable at slot {slot}: primary queue holds {queue} packets")]
    UnstableRun {
        slot: u64,
        queue: u64,
        partial: Box<SimStats>,
    },

    #[error("estimate undefined: {0}")]
    UndefinedEstimate(&'static str),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Validation {
            field,
            reason: reason.into(),
        }
    }

    /// True for errors that stem from the model's own domain restrictions
    /// rather than from malformed input.
    pub fn is_model_domain(&self) -> bool {
        matches!(
            self,
            Error::Numerical { .. }
                | Error::Domain(_)
                | Error::Unstable { .. }
                | Error::Infeasible { .. }
                | Error::NoStablePoint
                | Error::UnstableRun { .. }
                | Error::UndefinedEstimate(_)
        )
    }
}
