//! Simulation library for computation alignment over K x K complex fading
//! networks: receivers decode integer linear combinations of lattice-coded
//! messages at rates that stay within a constant gap of the network capacity,
//! independent of network depth.
//!
//! The pipeline mirrors the scheme it models:
//!
//! 1. [`fading`] draws circularly-symmetric complex channel gains (iid or
//!    AR(1)) with one deterministic RNG stream per link.
//! 2. [`quantizer`] maps each gain to a finite ring/sector cell grid whose
//!    representatives have bounded distortion in both magnitude and ratio.
//! 3. [`matcher`] finds time tuples across L subblocks whose quantized gain
//!    matrices repeat up to known phase rotations.
//! 4. [`aligner`] builds transmit vector families and matched filters that
//!    collapse each tuple into parallel single-symbol subchannels with
//!    integer coefficients.
//! 5. [`function_system`] collects the integer equations seen across
//!    receivers and checks/performs their inversion over Z_q.
//! 6. [`lattice_codec`] encodes message vectors onto nested hypercube
//!    lattices and decodes integer combinations from noisy subchannel
//!    outputs.
//! 7. [`bounds`] evaluates the closed-form achievable rates, cut-set upper
//!    bounds, and the constant-gap arithmetic between them.
//! 8. [`netsim`] wires everything into end-to-end single-layer and
//!    multi-layer experiments with reproducible seeding.
//!
//! Everything is deterministic given a master seed; no global RNG state is
//! used anywhere.

pub mod aligner;
pub mod bounds;
pub mod error;
pub mod fading;
pub mod function_system;
pub mod lattice_codec;
pub mod matcher;
pub mod netsim;
pub mod quantizer;
pub mod rng;

pub use error::Error;

/// Library-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
