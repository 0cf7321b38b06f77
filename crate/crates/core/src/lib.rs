//! Overcomplete independent component analysis through a semidefinite
//! relaxation.
//!
//! Step I estimates the span of the atoms `dᵢdᵢᵀ` from generalized covariances
//! (or the fourth-order cumulant); Step II extracts the atoms one by one with a
//! penalized SDP solved by FISTA, combined with a deflation strategy.

pub mod corela;
pub mod deflation;
pub mod error;
pub mod metrics;
pub mod mixing;
pub mod moments;
pub mod subspace;
pub mod synth;
pub mod theorylab;
pub mod par;
pub mod solver;

pub use error::{Error, ErrorKind, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
