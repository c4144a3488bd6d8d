use thiserror::Error;

use crate::panel::TimeIndex;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unknown unit `{0}`")]
    UnknownUnit(String),

    #[error("period {0} missing from deflator series")]
    MissingDeflator(TimeIndex),

    #[error("csv error at line {line}{}: {message}", column.as_ref().map(|c| format!(", column `{c}`")).unwrap_or_default())]
    Csv {
        line: u64,
        column: Option<String>,
        message: String,
    },

    #[error("insufficient pre-period data for unit `{unit}`: {observed} pre-periods observed, need at least 2")]
    InsufficientPrePeriods { unit: String, observed: usize },

    #[error("no balanced donors for unit `{0}`")]
    NoBalancedDonors(String),

    #[error("panel not balanced: missing cell ({unit}, {period})")]
    MissingCell { unit: String, period: TimeIndex },

    #[error("treatment not identified: {0}")]
    NotIdentified(String),

    #[error("fixed-effect demeaning did not converge after {0} sweeps")]
    NotConverged(usize),

    #[error("no treated units could be fitted ({skipped} skipped)")]
    NoUnitsFitted { skipped: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures raised while estimating, as opposed to malformed input.
    pub fn is_estimation(&self) -> bool {
        matches!(
            self,
            Error::InsufficientPrePeriods { .. }
                | Error::NoBalancedDonors(_)
                | Error::MissingCell { .. }
                | Error::NotIdentified(_)
                | Error::NotConverged(_)
                | Error::NoUnitsFitted { .. }
        )
    }

    pub(crate) fn csv(err: csv::Error) -> Self {
        let line = err.position().map(|p| p.line()).unwrap_or(0);
        match err.into_kind() {
            csv::ErrorKind::Io(e) => Error::Io(e),
            csv::ErrorKind::UnequalLengths {
                expected_len, len, ..
            } => Error::Csv {
                line,
                column: None,
                message: format!("expected {expected_len} fields, found {len}"),
            },
            other => Error::Csv {
                line,
                column: None,
                message: format!("{other:?}"),
            },
        }
    }
}
