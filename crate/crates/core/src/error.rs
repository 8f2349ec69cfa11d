use alloc::string::String;
use core::fmt;

use crate::IdentityId;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// A vector did not have the dimension the receiver was built for.
    DimensionMismatch {
        expected: usize,
        found: usize,
    },
    /// Two sequences that must be paired element-for-element differ in length.
    LengthMismatch {
        expected: usize,
        found: usize,
    },
    /// An embedding's L2 norm is farther than the ingest tolerance from 1.
    NotUnitNorm {
        norm: f64,
    },
    /// NaN or infinity where a finite value is required.
    NonFinite(&'static str),
    /// A configuration or argument value outside its valid range.
    InvalidParameter {
        name: &'static str,
        reason: String,
    },
    UnknownIdentity(IdentityId),
    /// A box with non-positive width or height after clipping.
    DegenerateBox,
    /// A dataset or gallery request that cannot be satisfied.
    Infeasible(String),
    /// Queue entries must arrive with non-decreasing iteration tags.
    OutOfOrder {
        last: u64,
        found: u64,
    },
    /// Training produced a NaN/inf loss.
    NonFiniteLoss {
        iteration: u64,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::LengthMismatch { expected, found } => {
                write!(f, "length mismatch: expected {expected}, found {found}")
            }
            Error::NotUnitNorm { norm } => write!(f, "embedding norm {norm} is not 1"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::InvalidParameter { name, reason } => write!(f, "invalid {name}: {reason}"),
            Error::UnknownIdentity(id) => write!(f, "unknown identity {}", id.0),
            Error::DegenerateBox => f.write_str("box is degenerate after clipping"),
            Error::Infeasible(why) => write!(f, "infeasible request: {why}"),
            Error::OutOfOrder { last, found } => {
                write!(f, "iteration tag {found} precedes queue tail tag {last}")
            }
            Error::NonFiniteLoss { iteration } => {
                write!(f, "non-finite loss at iteration {iteration}")
            }
        }
    }
}

impl core::error::Error for Error {}
