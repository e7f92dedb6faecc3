//! Continuous Lagrange finite elements on a uniform 1D mesh.

mod assembly;
mod inverse;
mod mesh;
mod norms;
mod quadrature;
mod space;

pub use assembly::{assemble, assemble_matrix, assemble_vector, PointBasis, SpatialOperators};
pub use inverse::{
    estimate_inverse_constant, InverseConstant, DEFAULT_POWER_MAX_ITER, DEFAULT_POWER_TOL,
};
pub use mesh::Mesh1D;
pub use norms::{evaluate_against_analytic, h1_seminorm, l2_norm, weighted_norm, Derivative};
pub use quadrature::{gauss_legendre, QuadratureRule};
pub use space::{LagrangeSpace, ShapeValues};

/// Poincaré constant of `H¹_0(0, 1)`.
pub const POINCARE_UNIT_INTERVAL: f64 = 1.0 / core::f64::consts::PI;
