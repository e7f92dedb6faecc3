//! SUPG-stabilised dynamical low-rank approximation of random
//! advection-diffusion-reaction problems on an interval.
//!
//! The random field `u(t, x, ω)` is discretised by continuous Lagrange
//! elements in `x` and collocation in `ω`, and kept in the factored form
//! `U Yᵀ` with μ-orthonormal stochastic modes. Each time step updates the
//! physical modes, then the stochastic modes, then re-orthonormalises.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod band;
pub mod dlr;
pub mod error;
pub mod fem1d;
pub mod measure;
pub mod metrics;
pub mod oracle;
pub mod stepper;
pub mod supg;

pub use error::{Error, Result};

/// Tolerance on `max |YᵀMY − I|` for stochastic modes.
pub const ORTHONORMALITY_TOL: f64 = 1e-12;
