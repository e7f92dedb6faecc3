use super::assembly::SpatialOperators;
use super::space::LagrangeSpace;
use crate::error::{Error, Result};

/// Inverse-inequality constant `C_I = h √λ_max(A, M)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseConstant {
    pub value: f64,
    pub lambda_max: f64,
    pub iterations: usize,
}

pub const DEFAULT_POWER_TOL: f64 = 1e-10;
pub const DEFAULT_POWER_MAX_ITER: usize = 200_000;

/// Power iteration on `M⁻¹A` over the interior dofs.
///
/// The start vector alternates in sign, which is close to the highest
/// frequency mode and keeps the iteration count low on fine meshes.
pub fn estimate_inverse_constant(
    space: &LagrangeSpace,
    ops: &SpatialOperators,
    tol: f64,
    max_iter: usize,
) -> Result<InverseConstant> {
    let n = space.n_interior();
    if n == 0 {
        return Err(Error::InvalidMesh("no interior degrees of freedom"));
    }
    let lu = ops.mass.lu()?;
    let mut v: alloc::vec::Vec<f64> = (0..n)
        .map(|i| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            sign * (1.0 + 0.1 * libm::sin(1.3 * i as f64 + 0.2))
        })
        .collect();
    let mut lambda = 0.0;
    for it in 1..=max_iter {
        let av = ops.stiffness.mul_vec(&v);
        let mut w = av.clone();
        lu.solve_in_place(&mut w);
        let num: f64 = v.iter().zip(&av).map(|(a, b)| a * b).sum();
        let den = ops.mass.bilinear(&v, &v);
        let next = num / den;
        let norm = libm::sqrt(ops.mass.bilinear(&w, &w));
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::NotConverged {
                context: "inverse constant power iteration",
                iterations: it,
            });
        }
        w.iter_mut().for_each(|x| *x /= norm);
        v = w;
        if it > 1 && (next - lambda).abs() <= tol * next.abs() {
            lambda = next;
            return Ok(InverseConstant {
                value: space.h() * libm::sqrt(lambda),
                lambda_max: lambda,
                iterations: it,
            });
        }
        lambda = next;
    }
    Err(Error::NotConverged {
        context: "inverse constant power iteration",
        iterations: max_iter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem1d::{assemble, Mesh1D};
    use core::f64::consts::PI;

    fn c_inv(n: usize, k: usize) -> f64 {
        let space = LagrangeSpace::new(Mesh1D::unit(n).unwrap(), k).unwrap();
        let ops = assemble(&space, 1.0);
        estimate_inverse_constant(&space, &ops, DEFAULT_POWER_TOL, DEFAULT_POWER_MAX_ITER)
            .unwrap()
            .value
    }

    /// Closed-form generalized eigenvalues of the P1 pencil:
    /// `λ_j = (6/h²)(1 − cos θ_j)/(2 + cos θ_j)`, `θ_j = jπ/n`.
    fn p1_closed_form(n: usize) -> f64 {
        let h = 1.0 / n as f64;
        (1..n)
            .map(|j| {
                let th = j as f64 * PI / n as f64;
                6.0 / (h * h) * (1.0 - libm::cos(th)) / (2.0 + libm::cos(th))
            })
            .fold(0.0, f64::max)
            .sqrt()
            * h
    }

    #[test]
    fn p1_matches_closed_form_and_tends_to_sqrt12() {
        for n in [8, 32, 64] {
            let got = c_inv(n, 1);
            let oracle = p1_closed_form(n);
            assert!(
                (got - oracle).abs() < 1e-6 * oracle,
                "n={n}: {got} vs {oracle}"
            );
        }
        let fine = c_inv(64, 1);
        assert!((fine - 12f64.sqrt()).abs() < 0.01 * 12f64.sqrt());
        // h-independence under refinement.
        let a = c_inv(32, 1);
        let b = c_inv(64, 1);
        assert!((a - b).abs() < 0.01 * b);
    }

    #[test]
    fn p2_against_dense_eigensolve() {
        let space = LagrangeSpace::new(Mesh1D::unit(16).unwrap(), 2).unwrap();
        let ops = assemble(&space, 1.0);
        let got =
            estimate_inverse_constant(&space, &ops, DEFAULT_POWER_TOL, DEFAULT_POWER_MAX_ITER)
                .unwrap();
        let m = ops.mass.to_dense();
        let a = ops.stiffness.to_dense();
        let l = m.cholesky().unwrap();
        let linv = l.l().try_inverse().unwrap();
        let sym = &linv * a * linv.transpose();
        let lmax = sym.symmetric_eigen().eigenvalues.max();
        assert!((got.lambda_max - lmax).abs() < 1e-6 * lmax);
        assert!(got.value > c_inv(16, 1));
    }
}
