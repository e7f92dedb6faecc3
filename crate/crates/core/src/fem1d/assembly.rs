use alloc::vec::Vec;

use super::quadrature::QuadratureRule;
use super::space::LagrangeSpace;
use crate::band::BandMatrix;

/// Shape functions at a physical quadrature point, derivatives in `x`.
#[derive(Debug, Clone, Copy, Default)]
pub struct PointBasis {
    pub value: [f64; 3],
    pub d1: [f64; 3],
    pub d2: [f64; 3],
}

/// Assembles `K[i][j] = Σ_q w_q · integrand(x_q, basis, j, i)` over interior
/// dofs (`j` trial, `i` test).
pub fn assemble_matrix(
    space: &LagrangeSpace,
    rule: &QuadratureRule,
    integrand: impl Fn(f64, &PointBasis, usize, usize) -> f64,
) -> BandMatrix {
    let k = space.degree();
    let n = space.n_interior();
    let mut out = BandMatrix::zeros(n, k, k);
    let inv_h = 1.0 / space.h();
    let nl = space.n_local();
    space.for_each_point(rule, |e, x, wh, shape| {
        let mut basis = PointBasis::default();
        for j in 0..nl {
            basis.value[j] = shape.value[j];
            basis.d1[j] = shape.d1[j] * inv_h;
            basis.d2[j] = shape.d2[j] * inv_h * inv_h;
        }
        for i in 0..nl {
            let Some(gi) = space.interior_index(e, i) else {
                continue;
            };
            for j in 0..nl {
                let Some(gj) = space.interior_index(e, j) else {
                    continue;
                };
                out.add(gi, gj, wh * integrand(x, &basis, j, i));
            }
        }
    });
    out
}

/// Assembles `F[i] = Σ_q w_q · integrand(x_q, basis, i)` over interior dofs.
pub fn assemble_vector(
    space: &LagrangeSpace,
    rule: &QuadratureRule,
    integrand: impl Fn(f64, &PointBasis, usize) -> f64,
) -> Vec<f64> {
    let mut out = alloc::vec![0.0; space.n_interior()];
    let inv_h = 1.0 / space.h();
    let nl = space.n_local();
    space.for_each_point(rule, |e, x, wh, shape| {
        let mut basis = PointBasis::default();
        for j in 0..nl {
            basis.value[j] = shape.value[j];
            basis.d1[j] = shape.d1[j] * inv_h;
            basis.d2[j] = shape.d2[j] * inv_h * inv_h;
        }
        for i in 0..nl {
            if let Some(gi) = space.interior_index(e, i) {
                out[gi] += wh * integrand(x, &basis, i);
            }
        }
    });
    out
}

/// Deterministic matrices on interior dofs for a constant advection speed
/// `b`. Row index is the test function, column index the trial function.
#[derive(Debug, Clone)]
pub struct SpatialOperators {
    pub advection: f64,
    /// `(φ_j, φ_i)`
    pub mass: BandMatrix,
    /// `(φ_j', φ_i')`
    pub stiffness: BandMatrix,
    /// `(b φ_j', φ_i)`
    pub convection: BandMatrix,
    /// `(φ_j, b φ_i')`
    pub mass_streamline: BandMatrix,
    /// `Σ_K (b φ_j', b φ_i')_K`
    pub streamline: BandMatrix,
    /// `Σ_K (φ_j'', b φ_i')_K`
    pub laplacian_streamline: BandMatrix,
}

/// Assembles the deterministic operators with `k + 2` Gauss points.
pub fn assemble(space: &LagrangeSpace, advection: f64) -> SpatialOperators {
    let rule = space.assembly_rule();
    let b = advection;
    SpatialOperators {
        advection,
        mass: assemble_matrix(space, &rule, |_, p, j, i| p.value[j] * p.value[i]),
        stiffness: assemble_matrix(space, &rule, |_, p, j, i| p.d1[j] * p.d1[i]),
        convection: assemble_matrix(space, &rule, |_, p, j, i| b * p.d1[j] * p.value[i]),
        mass_streamline: assemble_matrix(space, &rule, |_, p, j, i| p.value[j] * b * p.d1[i]),
        streamline: assemble_matrix(space, &rule, |_, p, j, i| b * p.d1[j] * b * p.d1[i]),
        laplacian_streamline: assemble_matrix(space, &rule, |_, p, j, i| p.d2[j] * b * p.d1[i]),
    }
}
