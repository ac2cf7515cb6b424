//! Crate-wide error type.

use alloc::string::String;
use core::fmt;

/// Errors produced by case validation, series algebra and the solvers.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A case invariant is violated; the message names the invariant.
    InvalidCase(String),
    /// A branch with zero series impedance cannot be admitted.
    ZeroImpedanceBranch { from: u32, to: u32 },
    /// Multi-index count exceeds the range of the count type.
    CountOverflow { dims: usize, order: usize },
    /// Series shapes (dimension/order) do not match.
    ShapeMismatch,
    /// Multi-index lies outside the index set.
    IndexOutOfRange,
    /// Reciprocal of a series with zero constant term.
    SingularReciprocal,
    /// Exact zero pivot during LU elimination.
    SingularSystem { pivot_step: usize },
    /// Matrix/vector dimensions are inconsistent.
    DimensionMismatch { expected: usize, got: usize },
    /// The embedding matrix is structurally singular; `bus` is the bus
    /// whose unknown column could not be eliminated.
    StructurallySingular { bus: u32 },
    /// Germ series tail still above tolerance at the order cap.
    GermNonConvergence { tail: f64, orders: usize },
    /// Converged germ violates a PV magnitude constraint.
    GermConstraintViolation { bus: u32, deviation: f64 },
    /// A PV bus propagated a zero voltage in germ step 1.
    DegenerateGermAnchor { bus: u32 },
    /// An invalid scale assignment; the message names the defect.
    InvalidAssignment(String),
    /// PV-to-PQ conversions kept oscillating past the iteration cap.
    LimitLoopCap { passes: usize, log: String },
    /// Artifact digests do not match the supplied case or assignment.
    DigestMismatch { expected: u64, got: u64 },
    /// A coefficient of an unsealed order was requested.
    UnsealedOrder { degree: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidCase(msg) => write!(f, "invalid case: {msg}"),
            Error::ZeroImpedanceBranch { from, to } => {
                write!(f, "branch {from}-{to} has zero series impedance")
            }
            Error::CountOverflow { dims, order } => {
                write!(f, "index count overflows u64 for D={dims}, M={order}")
            }
            Error::ShapeMismatch => write!(f, "series shapes do not match"),
            Error::IndexOutOfRange => write!(f, "multi-index outside the index set"),
            Error::SingularReciprocal => {
                write!(f, "reciprocal of a series with zero constant term")
            }
            Error::SingularSystem { pivot_step } => {
                write!(f, "exact zero pivot at elimination step {pivot_step}")
            }
            Error::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Error::StructurallySingular { bus } => {
                write!(f, "embedding system is structurally singular at bus {bus}")
            }
            Error::GermNonConvergence { tail, orders } => {
                write!(f, "germ series tail {tail:.3e} above tolerance after {orders} orders")
            }
            Error::GermConstraintViolation { bus, deviation } => {
                write!(
                    f,
                    "germ magnitude at bus {bus} deviates from setpoint by {deviation:.3e}"
                )
            }
            Error::DegenerateGermAnchor { bus } => {
                write!(f, "PV bus {bus} has zero step-1 voltage; case is degenerate")
            }
            Error::InvalidAssignment(msg) => write!(f, "invalid scale assignment: {msg}"),
            Error::LimitLoopCap { passes, log } => {
                write!(f, "Q-limit conversions did not settle after {passes} passes: {log}")
            }
            Error::DigestMismatch { expected, got } => {
                write!(f, "digest mismatch: artifact {expected:016x}, input {got:016x}")
            }
            Error::UnsealedOrder { degree } => {
                write!(f, "coefficients of degree {degree} are not sealed yet")
            }
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
