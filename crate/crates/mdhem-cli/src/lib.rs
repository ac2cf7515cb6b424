//! File formats, grids and command implementations for the `mdhem`
//! binary. Kept as a library so integration tests drive the same code
//! paths as the executable.

pub mod artifact_io;
pub mod case_io;
pub mod commands;
pub mod grid;
pub mod output;

/// Process exit codes. Parse and validation problems, germ failures,
/// divergence warnings and the limit-loop cap are distinguishable.
pub mod exit_codes {
    pub const OK: i32 = 0;
    pub const GENERAL: i32 = 1;
    pub const PARSE_VALIDATION: i32 = 2;
    pub const GERM_FAILURE: i32 = 3;
    pub const DIVERGENCE_WARNING: i32 = 4;
    pub const LIMIT_LOOP_CAP: i32 = 5;
}

/// Map an error chain onto the exit-code contract.
pub fn classify_error(err: &anyhow::Error) -> i32 {
    use mdhem_core::Error as E;
    if let Some(core) = err.downcast_ref::<E>() {
        return match core {
            E::InvalidCase(_)
            | E::ZeroImpedanceBranch { .. }
            | E::InvalidAssignment(_)
            | E::DigestMismatch { .. }
            | E::CountOverflow { .. }
            | E::ShapeMismatch
            | E::IndexOutOfRange
            | E::DimensionMismatch { .. } => exit_codes::PARSE_VALIDATION,
            E::GermNonConvergence { .. }
            | E::GermConstraintViolation { .. }
            | E::DegenerateGermAnchor { .. }
            | E::StructurallySingular { .. } => exit_codes::GERM_FAILURE,
            E::LimitLoopCap { .. } => exit_codes::LIMIT_LOOP_CAP,
            _ => exit_codes::GENERAL,
        };
    }
    if err.downcast_ref::<serde_json::Error>().is_some() {
        return exit_codes::PARSE_VALIDATION;
    }
    exit_codes::GENERAL
}
