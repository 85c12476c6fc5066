//! Error type shared across the crate.

use crate::mode::ModeIndex;
use std::fmt;

/// Everything that can go wrong in the solver library.
#[derive(Debug)]
pub enum Error {
    /// Argument outside the mathematical domain of an operation.
    Domain(String),
    /// A mode or tensor index violates a structural constraint.
    Index(String),
    /// An integrability precondition is not met (declared vanish order
    /// too low for the kernel singularity).
    Precondition(String),
    /// The graded quadrature did not reach the requested tolerance.
    NonConvergence { what: String, levels: u32 },
    /// Requested entries lie outside the energy range covered by a table.
    Coverage(String),
    /// Initial data has support on a conserved mode.
    Admissibility { mode: ModeIndex },
    /// A log-space prefactor left the representable range.
    Overflow(String),
    /// The adaptive time stepper underflowed its step size.
    StepUnderflow { t: f64, mode: ModeIndex },
    Io(std::io::Error),
    VersionMismatch { found: String, expected: String },
    DigestMismatch { stored: String, computed: String },
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Index(msg) => write!(f, "index error: {msg}"),
            Error::Precondition(msg) => write!(f, "precondition violated: {msg}"),
            Error::NonConvergence { what, levels } => {
                write!(f, "quadrature for {what} did not converge within {levels} levels")
            }
            Error::Coverage(msg) => write!(f, "table coverage error: {msg}"),
            Error::Admissibility { mode } => {
                write!(f, "initial data is not perturbation-admissible: nonzero on {mode}")
            }
            Error::Overflow(msg) => write!(f, "overflow: {msg}"),
            Error::StepUnderflow { t, mode } => {
                write!(f, "step size underflow at t = {t} (limiting mode {mode})")
            }
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::VersionMismatch { found, expected } => {
                write!(f, "format version mismatch: found {found}, expected {expected}")
            }
            Error::DigestMismatch { stored, computed } => {
                write!(f, "content digest mismatch: stored {stored}, computed {computed}")
            }
            Error::Malformed(msg) => write!(f, "malformed file: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
