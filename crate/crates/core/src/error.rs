use thiserror::Error;

/// Errors produced by the sampling-plan library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A parameter violated its domain (negative rate, unordered epochs, ...).
    #[error("invalid `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// An interval, cause or inspection index fell outside its valid range.
    #[error("{what} index {index} out of range (size {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    /// Failure counts do not fit the plan they are evaluated against.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The exact outcome space is too large to enumerate; use a Monte Carlo path.
    #[error("outcome space of {size:.3e} outcomes exceeds the enumeration cap {cap}")]
    EnumerationCap { size: f64, cap: u64 },

    /// The likelihood score is undefined when no failure was observed.
    #[error("no failures observed; the likelihood score is undefined")]
    NoFailures,

    /// Every unit failed in the first interval, so the rate estimate diverges.
    #[error("rate estimate is unbounded: all units failed in the first interval")]
    UnboundedEstimate,

    /// The expected information matrix could not be factorised.
    #[error("Fisher information is singular (pivot {pivot:.3e})")]
    SingularInformation { pivot: f64 },

    /// An alternating binomial expansion lost too many significant digits.
    #[error("alternating sum is numerically unstable (condition {condition:.3e})")]
    Unstable { condition: f64 },

    /// Every importance weight underflowed in a self-normalised estimate.
    #[error("all likelihood weights underflowed")]
    WeightUnderflow,

    /// Too many prior draws had a singular information matrix.
    #[error("{dropped} of {total} prior draws had singular information")]
    TooManySingular { dropped: usize, total: usize },

    /// A numerical routine failed to converge or produced a non-finite value.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
