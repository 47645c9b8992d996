use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("grid needs at least {min} intervals, got {n}")]
    GridTooSmall { n: usize, min: usize },

    #[error("non-positive variance {value} at index {index}")]
    NonPositiveVariance { index: usize, value: f64 },

    #[error("non-finite {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("length mismatch: expected {expected} {what}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("fine grid has {actual} points, expected n^2 + 1 = {expected}")]
    BlockMisaligned { expected: usize, actual: usize },

    #[error("resolution level {level} too fine for n = {n} (2^J > n)")]
    LevelTooFine { level: u32, n: usize },

    #[error("length {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("singular design matrix (rank-deficient normal equations)")]
    SingularDesign,

    #[error("no multi-start leg reached gradient tolerance {tolerance:e}")]
    NoConvergence { tolerance: f64 },

    #[error("parameter {index} = {value} outside bounds [{lo}, {hi}]")]
    ParamOutOfBounds {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("bootstrap degenerate: {failed} of {total} replications failed")]
    BootstrapDegenerate { failed: usize, total: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// Errors that stem from a numerical breakdown rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonPositiveVariance { .. }
                | Error::NonFinite { .. }
                | Error::SingularDesign
                | Error::NoConvergence { .. }
                | Error::BootstrapDegenerate { .. }
        )
    }
}
