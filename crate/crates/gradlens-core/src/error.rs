//! Crate-wide error type.
//!
//! Every fallible operation in this crate returns [`Result`]. Variants carry
//! enough structure for callers to react programmatically (and for tests to
//! assert on the failure class) while still formatting into a readable
//! one-line diagnostic.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An operation received operands whose shapes do not compose.
    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        actual: String,
    },

    /// A layer descriptor cannot be applied to its incoming shape.
    /// `index` is the zero-based position of the offending layer.
    #[error("layer {index} ({layer}): {reason}")]
    LayerMismatch {
        index: usize,
        layer: String,
        reason: String,
    },

    /// An input collection that must be nonempty was empty.
    #[error("{what} must not be empty")]
    Empty { what: &'static str },

    /// A cohort became empty after filtering; `context` says which filter
    /// (e.g. "all attacks failed the success filter").
    #[error("empty cohort: {context}")]
    EmptyCohort { context: String },

    /// A configuration value is out of its documented domain.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// A dataset label does not fit the declared class count.
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    /// NaN or infinity showed up where finite values are required.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// Correlation of a constant vector is undefined.
    #[error("correlation undefined: {which} input is constant")]
    ConstantInput { which: &'static str },

    /// A covariance matrix is not symmetric positive-definite.
    #[error("covariance matrix is not symmetric positive-definite")]
    NotPositiveDefinite,

    /// A file did not match its expected binary format.
    #[error("{path}: {reason}")]
    FileFormat { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Shorthand for [`Error::ShapeMismatch`] with formatted shape lists.
    pub fn shape(op: &'static str, expected: impl std::fmt::Debug, actual: impl std::fmt::Debug) -> Self {
        Error::ShapeMismatch {
            op,
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }
}
