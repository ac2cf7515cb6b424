#![no_std]

//! Power-flow solver core based on multi-dimensional holomorphic embedding.
//!
//! The library computes explicit approximate analytical solutions of AC
//! power-flow equations as truncated multivariate power series in
//! user-defined load scales. The pipeline is:
//!
//! 1. [`network`] — case model and admittance matrix.
//! 2. [`germ`] — the physical germ solution (no-load operating point with
//!    PV buses held at setpoint voltage and specified active power).
//! 3. [`mdhem`] — the multi-dimensional embedding engine: one loading
//!    scale per load power (or per group of loads), solved order by order
//!    against a single factorized real system.
//! 4. [`nr`] — a conventional Newton-Raphson solver used as the
//!    independent verification oracle.
//!
//! [`helm1d`] carries the conventional single-dimensional holomorphic
//! embedding as a cross-check path, and [`mpseries`]/[`numeric`] are the
//! shared series-algebra and linear-system layers.
//!
//! The crate is `no_std` (with `alloc`); file formats and the CLI live in
//! the companion `mdhem-cli` crate.

extern crate alloc;

#[cfg(test)]
#[macro_use]
extern crate std;

pub mod cases;
pub mod error;
pub mod germ;
pub mod helm1d;
pub mod mdhem;
pub mod mpseries;
pub mod network;
pub mod nr;
pub mod numeric;

pub use error::Error;
pub use germ::GermSolution;
pub use mdhem::{MdhemArtifact, PfSolution, ScaleAssignment};
pub use mpseries::{IndexSet, MpSeries, MultiIndex};
pub use network::{AdmittanceMatrix, BusKind, NetworkCase};
pub use nr::{NrConfig, NrOutcome};

/// FNV-1a 64-bit hash, used for case and scale-assignment digests.
///
/// The digest detects artifact/case mismatches; it is an integrity check,
/// not a cryptographic one.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
