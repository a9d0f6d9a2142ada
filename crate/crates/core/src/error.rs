use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid panel: {0}")]
    InvalidPanel(String),
    #[error("invalid treatment mask: {0}")]
    InvalidMask(String),
    #[error("panel contains missing values; impute before estimating")]
    IncompletePanel,
    #[error("unit `{0}` has no observed values")]
    AllMissingUnit(String),
    #[error("non-positive value {value} at unit {row}, period {col}")]
    NonPositiveValue { row: usize, col: usize, value: f64 },
    #[error("fewer than two units remain after preprocessing")]
    DegeneratePanel,
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: (usize, usize), found: (usize, usize) },
    #[error("labels contain a single class")]
    DegenerateLabels,
    #[error("perfect separation detected (coefficient norm {0:.3e})")]
    SeparationDetected(f64),
    #[error("matrix is singular or not positive definite")]
    Singular,
    #[error("non-finite value encountered in {0}")]
    NumericalDivergence(&'static str),
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("placebo distribution is empty")]
    EmptyDistribution,
    #[error("count does not fit in 128 bits")]
    Overflow,
}

macro_rules! invalid {
    ($variant:ident, $($arg:tt)*) => {
        $crate::error::Error::$variant(alloc::format!($($arg)*))
    };
}
pub(crate) use invalid;
