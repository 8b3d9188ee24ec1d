//! Crate-wide error type. Variants correspond to the failure classes the
//! simulator can hit: invalid configuration, domain violations on inputs,
//! a modulus too small for the integer coefficients it must represent, and
//! inconsistent data discovered while inverting decoded equations.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A configuration value is outside its documented range.
    InvalidConfig(String),
    /// An input violates a documented precondition (wrong length, NaN, ...).
    Domain(String),
    /// The Z_q modulus cannot faithfully carry the integer coefficients.
    ModulusTooSmall { q: u64, needed: u64 },
    /// Decoded equation values are mutually inconsistent; the linear system
    /// over Z_q has no solution.
    DecodeIntegrity(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::ModulusTooSmall { q, needed } => {
                write!(f, "modulus {q} too small: need q > {needed} and q prime")
            }
            Error::DecodeIntegrity(msg) => write!(f, "decode integrity: {msg}"),
        }
    }
}

impl std::error::Error for Error {}
