use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("length mismatch: expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("infeasible: {reason}{}", hint_suffix(.min_rounds_hint))]
    Infeasible {
        reason: String,
        min_rounds_hint: Option<usize>,
    },

    #[error("no feasible grid point")]
    NoFeasibleGridPoint,

    #[error("reference energy must be positive, got {0}")]
    NonPositiveReference(f64),

    #[error("segment did not settle before the end of the horizon")]
    NeverSettled,
}

fn hint_suffix(hint: &Option<usize>) -> String {
    match hint {
        Some(i) => format!(" (smallest feasible I_MAX is {i})"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn infeasible(reason: impl Into<String>) -> Self {
        Error::Infeasible {
            reason: reason.into(),
            min_rounds_hint: None,
        }
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::Infeasible { .. } | Error::NoFeasibleGridPoint)
    }
}
