//! Rank-`R` fields `U Yᵀ`, tangent projections and the low-rank diagnostics.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::band::{BandLu, BandMatrix};
use crate::error::{Error, Result};
use crate::fem1d::SpatialOperators;
use crate::measure::{weighted_truncated_svd, DiscreteMeasure, StochasticModes};
use crate::supg::SupgOperators;

/// Low-rank state: physical modes `U` (`N_int × R`) and μ-orthonormal
/// stochastic modes `Y` (`N_C × R`).
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankField {
    physical: DMatrix<f64>,
    modes: StochasticModes,
}

impl LowRankField {
    pub fn new(physical: DMatrix<f64>, modes: StochasticModes) -> Result<Self> {
        if physical.ncols() != modes.rank() {
            return Err(Error::Dimension {
                context: "low-rank field (rank)",
                expected: modes.rank(),
                found: physical.ncols(),
            });
        }
        Ok(Self { physical, modes })
    }

    pub fn physical(&self) -> &DMatrix<f64> {
        &self.physical
    }

    pub fn modes(&self) -> &StochasticModes {
        &self.modes
    }

    pub fn stochastic(&self) -> &DMatrix<f64> {
        self.modes.values()
    }

    pub fn rank(&self) -> usize {
        self.physical.ncols()
    }

    pub fn n_interior(&self) -> usize {
        self.physical.nrows()
    }

    pub fn n_collocation(&self) -> usize {
        self.modes.values().nrows()
    }

    /// `U Yᵀ`.
    pub fn expand(&self) -> DMatrix<f64> {
        &self.physical * self.modes.values().transpose()
    }

    /// Condition number of `UᵀU`; infinite when `U` is rank deficient.
    pub fn physical_condition(&self) -> f64 {
        if self.rank() == 0 {
            return 1.0;
        }
        let sv = self.physical.clone().singular_values();
        let (smax, smin) = (sv.max(), sv.min());
        if smin == 0.0 {
            f64::INFINITY
        } else {
            (smax / smin) * (smax / smin)
        }
    }
}

/// Tangent vector `dU Yᵀ + U dYᵀ` with `Yᵀ diag(m) dY = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub du: DMatrix<f64>,
    pub dy: DMatrix<f64>,
}

impl TangentVector {
    pub fn to_tensor(&self, at: &LowRankField) -> DMatrix<f64> {
        &self.du * at.stochastic().transpose() + at.physical() * self.dy.transpose()
    }

    /// `max |E[Y_i dY_j]|`.
    pub fn dual_do_defect(&self, at: &LowRankField, measure: &DiscreteMeasure) -> f64 {
        measure.cross_gram(at.stochastic(), &self.dy).amax()
    }
}

/// Projection onto `T_u M_R` that is orthogonal for the pairing
/// `⟨X, W⟩ = Σ_l m_l X_lᵀ G W_l`.
///
/// Testing against `v Y_jᵀ` gives `dU = V diag(m) Y`; testing against
/// `U_j zᵀ` with `z ⊥ Y` gives `dY = P_Y^⊥ Vᵀ G U (UᵀGU)⁻¹`.
fn project_with(
    field: &LowRankField,
    pairing: &BandMatrix,
    measure: &DiscreteMeasure,
    v: &DMatrix<f64>,
) -> Result<TangentVector> {
    check_tensor(field, v, "tangent projection")?;
    let u = field.physical();
    let y = field.stochastic();
    let du = v * measure.weigh_rows(y);
    if field.rank() == measure.len() {
        // Full stochastic rank: P_Y^⊥ = 0 and `dU Yᵀ` already spans every
        // tensor.
        let dy = DMatrix::zeros(y.nrows(), y.ncols());
        return Ok(TangentVector { du, dy });
    }
    let gu = pairing.mul_dense(u);
    let w = u.transpose() * &gu;
    let degenerate = Error::RankDegeneracy {
        context: "tangent projection mode Gram",
        column: 0,
        condition: f64::INFINITY,
    };
    if !mode_gram_ok(&w) {
        return Err(degenerate);
    }
    // Z = Vᵀ G U W⁻¹, solved as Wᵀ Zᵀ = (VᵀGU)ᵀ.
    let rhs = v.transpose() * &gu;
    let z = w
        .transpose()
        .lu()
        .solve(&rhs.transpose())
        .ok_or(degenerate)?
        .transpose();
    let dy = apply_complement(measure, y, &z);
    Ok(TangentVector { du, dy })
}

fn mode_gram_ok(w: &DMatrix<f64>) -> bool {
    let sv = w.clone().singular_values();
    sv.min() > 1e-14 * sv.max().max(f64::MIN_POSITIVE)
}

/// `P_Y^⊥ Z = Z − Y (Yᵀ diag(m) Z)`.
pub(crate) fn apply_complement(
    measure: &DiscreteMeasure,
    y: &DMatrix<f64>,
    z: &DMatrix<f64>,
) -> DMatrix<f64> {
    if y.ncols() == measure.len() {
        return DMatrix::zeros(z.nrows(), z.ncols());
    }
    z - y * measure.cross_gram(y, z)
}

fn check_tensor(field: &LowRankField, v: &DMatrix<f64>, context: &'static str) -> Result<()> {
    if v.nrows() != field.n_interior() || v.ncols() != field.n_collocation() {
        return Err(Error::Dimension {
            context,
            expected: field.n_interior() * field.n_collocation(),
            found: v.nrows() * v.ncols(),
        });
    }
    Ok(())
}

/// L²_μ(L²)-orthogonal projection onto the tangent space (mass pairing).
pub fn project_tangent_orthogonal(
    field: &LowRankField,
    spatial: &SpatialOperators,
    measure: &DiscreteMeasure,
    v: &DMatrix<f64>,
) -> Result<TangentVector> {
    project_with(field, &spatial.mass, measure, v)
}

/// Oblique projection `P_{H*}` with `(P v − v, H* w) = 0` for every tangent
/// `w`, where `H* = I − δ b·∇`.
pub fn project_tangent_oblique(
    field: &LowRankField,
    ops: &SupgOperators,
    measure: &DiscreteMeasure,
    v: &DMatrix<f64>,
) -> Result<TangentVector> {
    // (X, H* W) = Σ m_l X_lᵀ G_* W_l is a pairing of the required form with
    // the residual on the left.
    project_with(field, &ops.adjoint_mass, measure, v)
}

/// Largest `‖P_{H*} v‖ / ‖v‖` over random full tensors `v`.
pub fn check_projector_bound(
    field: &LowRankField,
    ops: &SupgOperators,
    measure: &DiscreteMeasure,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, nc) = (field.n_interior(), field.n_collocation());
    let mut worst: f64 = 0.0;
    for _ in 0..n_samples {
        let v = DMatrix::from_fn(n, nc, |_, _| rng.gen_range(-1.0..1.0));
        let p = project_tangent_oblique(field, ops, measure, &v)?.to_tensor(field);
        let ratio = libm::sqrt(ops.l2_norm_sq(measure, &p) / ops.l2_norm_sq(measure, &v));
        worst = worst.max(ratio);
    }
    Ok(worst)
}

/// Largest generalised eigenvalue of `((∇U_i, ∇U_j), (U_i, U_j))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisInverseConstant {
    /// Bound on the Rayleigh quotient `‖∇v‖²/‖v‖²` over `span(U)`.
    pub lambda_max: f64,
    /// `√λ_max`, the constant in `‖∇ U Zᵀ‖ ≤ C ‖U Zᵀ‖`.
    pub constant: f64,
}

pub fn compute_c_lbi(u: &DMatrix<f64>, spatial: &SpatialOperators) -> Result<BasisInverseConstant> {
    if u.nrows() != spatial.mass.dim() {
        return Err(Error::Dimension {
            context: "compute_c_lbi",
            expected: spatial.mass.dim(),
            found: u.nrows(),
        });
    }
    let mn = u.transpose() * spatial.mass.mul_dense(u);
    let sn = u.transpose() * spatial.stiffness.mul_dense(u);
    let degenerate = Error::RankDegeneracy {
        context: "compute_c_lbi mode mass matrix",
        column: 0,
        condition: f64::INFINITY,
    };
    if u.ncols() == 0 {
        return Err(degenerate);
    }
    // Restrict to the numerical range of U: directions whose L² norm is below
    // 1e-10 of the largest carry no part of the field.
    let eig = ((&mn + mn.transpose()) * 0.5).symmetric_eigen();
    let top = eig.eigenvalues.max();
    if !(top > 0.0) {
        return Err(degenerate);
    }
    let keep: alloc::vec::Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > 1e-20 * top)
        .collect();
    let q = DMatrix::from_fn(u.ncols(), keep.len(), |r, c| {
        eig.eigenvectors[(r, keep[c])] / libm::sqrt(eig.eigenvalues[keep[c]])
    });
    let sym = q.transpose() * sn * &q;
    let sym = (&sym + sym.transpose()) * 0.5;
    let lambda_max = sym.symmetric_eigen().eigenvalues.max();
    Ok(BasisInverseConstant {
        lambda_max,
        constant: libm::sqrt(lambda_max.max(0.0)),
    })
}

/// Workspace for repeated model-error evaluations on one mesh.
#[derive(Debug, Clone)]
pub struct ModelErrorEstimator {
    mass_lu: BandLu,
}

impl ModelErrorEstimator {
    pub fn new(ops: &SupgOperators) -> Result<Self> {
        Ok(Self {
            mass_lu: ops.spatial.mass.lu()?,
        })
    }

    /// `ν̂ = sup_v |a_SUPG(û, P⊥v) − (f, H P⊥v)| / ‖v‖` with
    /// `P⊥ = I − P_{H*}` at `û`, evaluated through the Frobenius adjoint of
    /// `P⊥` applied to the residual `ρ_l = m_l (Ã_l û_l − F_l)`.
    pub fn estimate(
        &self,
        field: &LowRankField,
        ops: &SupgOperators,
        measure: &DiscreteMeasure,
        load: &DMatrix<f64>,
    ) -> Result<f64> {
        let full = field.expand();
        check_tensor(field, load, "model error load")?;
        let mut rho = DMatrix::zeros(full.nrows(), full.ncols());
        for (l, m) in measure.weights().iter().enumerate() {
            let au = ops.system[l].mul_vec(full.column(l).as_slice());
            for i in 0..full.nrows() {
                rho[(i, l)] = m * (au[i] - load[(i, l)]);
            }
        }
        if rho.amax() == 0.0 {
            return Ok(0.0);
        }
        let g = self.complement_adjoint(field, ops, measure, &rho)?;
        let mut acc = 0.0;
        for (l, m) in measure.weights().iter().enumerate() {
            let gl = g.column(l).into_owned();
            let sol = self.mass_lu.solve(gl.as_slice());
            let q: f64 = gl.iter().zip(&sol).map(|(a, b)| a * b).sum();
            acc += q / m;
        }
        Ok(libm::sqrt(acc.max(0.0)))
    }

    /// `(I − P)ᵀ ρ` for `P(V) = V A₁ + B₁ V C₁` with `A₁ = diag(m) Y Yᵀ`,
    /// `B₁ = U W⁻ᵀ Uᵀ G_*ᵀ`, `C₁ = (P_Y^⊥)ᵀ`, `W = Uᵀ G_* U`.
    fn complement_adjoint(
        &self,
        field: &LowRankField,
        ops: &SupgOperators,
        measure: &DiscreteMeasure,
        rho: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        let u = field.physical();
        let y = field.stochastic();
        // ρ A₁ᵀ = ρ Y Yᵀ diag(m).
        let rho_a = measure.weigh_columns(&(rho * y * y.transpose()));
        if field.rank() == measure.len() {
            return Ok(rho - rho_a);
        }
        let g_u = ops.adjoint_mass.mul_dense(u);
        let w = u.transpose() * &g_u;
        if !mode_gram_ok(&w) {
            return Err(Error::RankDegeneracy {
                context: "model error mode Gram",
                column: 0,
                condition: f64::INFINITY,
            });
        }
        let w_inv = w.try_inverse().ok_or(Error::RankDegeneracy {
            context: "model error mode Gram",
            column: 0,
            condition: f64::INFINITY,
        })?;
        // B₁ᵀ = G_* U W⁻¹ Uᵀ; C₁ᵀ = P_Y^⊥, so B₁ᵀ ρ C₁ᵀ = G_* U W⁻¹ (Uᵀρ) P_Y^⊥.
        let utr = u.transpose() * rho;
        let right = utr.clone() - (&utr * y) * measure.weigh_rows(y).transpose();
        let b_part = g_u * (w_inv * right);
        Ok(rho - rho_a - b_part)
    }
}

/// Convenience wrapper around [`ModelErrorEstimator`].
pub fn estimate_model_error(
    field: &LowRankField,
    ops: &SupgOperators,
    measure: &DiscreteMeasure,
    load: &DMatrix<f64>,
) -> Result<f64> {
    ModelErrorEstimator::new(ops)?.estimate(field, ops, measure, load)
}

/// Best rank-`R` approximation of a full tensor in the `M ⊗ diag(m)` norm.
pub fn truncate(
    tensor: &DMatrix<f64>,
    spatial: &SpatialOperators,
    measure: &DiscreteMeasure,
    rank: usize,
) -> Result<(LowRankField, f64)> {
    let svd = weighted_truncated_svd(tensor, &spatial.mass.to_dense(), measure, rank)?;
    let field = LowRankField::new(svd.physical, svd.modes)?;
    Ok((field, svd.truncation_error))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem1d::{
        assemble, estimate_inverse_constant, LagrangeSpace, Mesh1D, DEFAULT_POWER_MAX_ITER,
        DEFAULT_POWER_TOL,
    };
    use crate::measure::weighted_orthonormalize;
    use crate::supg::{assemble_supg, select_delta, ProblemCoefficients, StabilizationParams};
    use alloc::vec::Vec;
    use core::f64::consts::PI;

    struct Fixture {
        space: LagrangeSpace,
        measure: DiscreteMeasure,
        ops: SupgOperators,
        field: LowRankField,
    }

    fn random(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn fixture(
        n_el: usize,
        k: usize,
        nc: usize,
        rank: usize,
        delta: Option<f64>,
        seed: u64,
    ) -> Fixture {
        let space = LagrangeSpace::new(Mesh1D::unit(n_el).unwrap(), k).unwrap();
        let measure = DiscreteMeasure::equispaced(nc).unwrap();
        let coeffs =
            ProblemCoefficients::constant(1e-8, 1.0, 1.0).with_reaction(|_, w| 1.0 + w, 1.0, 2.0);
        let params = match delta {
            Some(d) => StabilizationParams::with_delta(d, 0.1),
            None => {
                let sp = assemble(&space, 1.0);
                let ci = estimate_inverse_constant(
                    &space,
                    &sp,
                    DEFAULT_POWER_TOL,
                    DEFAULT_POWER_MAX_ITER,
                )
                .unwrap()
                .value;
                select_delta(space.h(), 0.1, &coeffs, ci, 1.0).unwrap()
            }
        };
        let ops = assemble_supg(&space, &coeffs, &params, &measure).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = weighted_orthonormalize(&random(nc, rank, &mut rng), &measure, 1e12)
            .unwrap()
            .modes;
        let u = random(space.n_interior(), rank, &mut rng);
        let field = LowRankField::new(u, y).unwrap();
        Fixture {
            space,
            measure,
            ops,
            field,
        }
    }

    /// Dense oracle: expand the tangent space into an explicit basis and solve
    /// the Petrov-Galerkin normal equations for the pairing `G`.
    fn dense_projection(f: &Fixture, pairing: &BandMatrix, v: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, nc, r) = (
            f.field.n_interior(),
            f.field.n_collocation(),
            f.field.rank(),
        );
        let y = f.field.stochastic();
        let q = f.measure.complement_basis(y).unwrap();
        let mut basis: Vec<DMatrix<f64>> = Vec::new();
        for a in 0..n {
            for j in 0..r {
                let mut e = DMatrix::zeros(n, 1);
                e[(a, 0)] = 1.0;
                basis.push(&e * y.column(j).transpose());
            }
        }
        for i in 0..r {
            for c in 0..q.ncols() {
                basis.push(f.field.physical().column(i) * q.column(c).transpose());
            }
        }
        let pair = |x: &DMatrix<f64>, w: &DMatrix<f64>| -> f64 {
            (0..nc)
                .map(|l| {
                    f.measure.weights()[l]
                        * pairing.bilinear(x.column(l).as_slice(), w.column(l).as_slice())
                })
                .sum()
        };
        let p = basis.len();
        let s = DMatrix::from_fn(p, p, |w, k| pair(&basis[k], &basis[w]));
        let rhs = DMatrix::from_fn(p, 1, |w, _| pair(v, &basis[w]));
        let c = s.lu().solve(&rhs).unwrap();
        let mut out = DMatrix::zeros(n, nc);
        for (k, b) in basis.iter().enumerate() {
            out += b * c[(k, 0)];
        }
        out
    }

    #[test]
    fn expand_examples() {
        let measure = DiscreteMeasure::equispaced(3).unwrap();
        let y = StochasticModes::new(DMatrix::from_element(3, 1, 1.0), &measure).unwrap();
        let g = DMatrix::from_column_slice(4, 1, &[1.0, -2.0, 3.0, 0.5]);
        let full = LowRankField::new(g.clone(), y.clone()).unwrap().expand();
        for l in 0..3 {
            assert_eq!(full.column(l), g.column(0));
        }
        let zero = LowRankField::new(DMatrix::zeros(4, 1), y).unwrap().expand();
        assert_eq!(zero.amax(), 0.0);

        let f = fixture(8, 1, 5, 3, Some(0.0), 1);
        let full = f.field.expand();
        for a in 0..f.field.n_interior() {
            for l in 0..5 {
                let mut s = 0.0;
                for i in 0..3 {
                    s += f.field.physical()[(a, i)] * f.field.stochastic()[(l, i)];
                }
                assert!((full[(a, l)] - s).abs() < 1e-14);
            }
        }
        assert!(LowRankField::new(DMatrix::zeros(7, 2), f.field.modes().clone()).is_err());
    }

    #[test]
    fn orthogonal_projector_against_dense_oracle() {
        let f = fixture(10, 1, 4, 2, Some(0.0), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random(9, 4, &mut rng);
        let t = project_tangent_orthogonal(&f.field, &f.ops.spatial, &f.measure, &v).unwrap();
        assert!(t.dual_do_defect(&f.field, &f.measure) < 1e-12);
        let p = t.to_tensor(&f.field);
        let oracle = dense_projection(&f, &f.ops.spatial.mass, &v);
        assert!((&p - &oracle).amax() < 1e-10 * v.amax());
        // Point on the manifold and a tangent vector are fixed.
        let u = f.field.expand();
        let pu = project_tangent_orthogonal(&f.field, &f.ops.spatial, &f.measure, &u)
            .unwrap()
            .to_tensor(&f.field);
        assert!((&pu - &u).amax() < 1e-12 * u.amax());
        let pp = project_tangent_orthogonal(&f.field, &f.ops.spatial, &f.measure, &p)
            .unwrap()
            .to_tensor(&f.field);
        assert!((&pp - &p).amax() < 1e-12 * p.amax());
    }

    #[test]
    fn oblique_projector_against_dense_oracle() {
        let f = fixture(10, 2, 4, 2, None, 4);
        assert!(f.ops.delta > 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = random(f.field.n_interior(), 4, &mut rng);
        let p = project_tangent_oblique(&f.field, &f.ops, &f.measure, &v)
            .unwrap()
            .to_tensor(&f.field);
        let oracle = dense_projection(&f, &f.ops.adjoint_mass, &v);
        assert!((&p - &oracle).amax() < 1e-10 * v.amax());
        let orth = project_tangent_orthogonal(&f.field, &f.ops.spatial, &f.measure, &v)
            .unwrap()
            .to_tensor(&f.field);
        assert!((&p - &orth).amax() > 1e-8);
        let pp = project_tangent_oblique(&f.field, &f.ops, &f.measure, &p)
            .unwrap()
            .to_tensor(&f.field);
        assert!((&pp - &p).amax() < 1e-10 * p.amax());
    }

    #[test]
    fn oblique_collapses_without_stabilisation() {
        let f = fixture(12, 2, 6, 3, Some(0.0), 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v = random(f.field.n_interior(), 6, &mut rng);
        let a = project_tangent_oblique(&f.field, &f.ops, &f.measure, &v)
            .unwrap()
            .to_tensor(&f.field);
        let b = project_tangent_orthogonal(&f.field, &f.ops.spatial, &f.measure, &v)
            .unwrap()
            .to_tensor(&f.field);
        assert!((&a - &b).amax() < 1e-12 * v.amax());
        assert!(check_projector_bound(&f.field, &f.ops, &f.measure, 50, 1).unwrap() <= 1.0 + 1e-10);
    }

    #[test]
    fn projector_bound_holds() {
        let f = fixture(16, 1, 15, 6, None, 8);
        let ratio = check_projector_bound(&f.field, &f.ops, &f.measure, 100, 2).unwrap();
        assert!(ratio <= 3.0 + 1e-8, "ratio {ratio}");
    }

    #[test]
    fn degenerate_modes_are_reported() {
        let f = fixture(8, 1, 4, 2, Some(0.0), 9);
        let u = DMatrix::zeros(7, 2);
        let field = LowRankField::new(u, f.field.modes().clone()).unwrap();
        let v = DMatrix::from_element(7, 4, 1.0);
        assert!(matches!(
            project_tangent_orthogonal(&field, &f.ops.spatial, &f.measure, &v),
            Err(Error::RankDegeneracy { .. })
        ));
        assert!(compute_c_lbi(field.physical(), &f.ops.spatial).is_err());
    }

    #[test]
    fn c_lbi_examples() {
        let space = LagrangeSpace::new(Mesh1D::unit(128).unwrap(), 1).unwrap();
        let sp = assemble(&space, 1.0);
        let s = space.interpolate(|x| libm::sin(PI * x));
        let u = DMatrix::from_column_slice(s.len(), 1, s.as_slice());
        let c = compute_c_lbi(&u, &sp).unwrap();
        assert!((c.constant - PI).abs() < 0.02 * PI);
        assert!((c.lambda_max - c.constant * c.constant).abs() < 1e-12 * c.lambda_max);

        let s2 = space.interpolate(|x| libm::sin(2.0 * PI * x) + x * (1.0 - x));
        let pair = DMatrix::from_columns(&[s.clone(), s2]);
        let mix = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -0.5, 3.0]);
        let a = compute_c_lbi(&pair, &sp).unwrap();
        let b = compute_c_lbi(&(&pair * mix), &sp).unwrap();
        assert!((a.lambda_max - b.lambda_max).abs() < 1e-10 * a.lambda_max);

        let osc = space.interpolate(|x| libm::sin(20.0 * PI * x));
        let rough = compute_c_lbi(&DMatrix::from_columns(&[s.clone(), osc]), &sp).unwrap();
        assert!(rough.lambda_max > a.lambda_max);
        // Dense oracle on the oscillatory pair.
        let m = DMatrix::from_columns(&[s, space.interpolate(|x| libm::sin(20.0 * PI * x))]);
        let mn = m.transpose() * sp.mass.mul_dense(&m);
        let sn = m.transpose() * sp.stiffness.mul_dense(&m);
        let eig = (mn.try_inverse().unwrap() * sn).eigenvalues().unwrap();
        assert!((eig.max() - rough.lambda_max).abs() < 1e-9 * rough.lambda_max);
    }

    #[test]
    fn c_lbi_ignores_numerically_null_directions() {
        let space = LagrangeSpace::new(Mesh1D::unit(64).unwrap(), 1).unwrap();
        let sp = assemble(&space, 1.0);
        let s = space.interpolate(|x| libm::sin(PI * x));
        let noise = space.interpolate(|x| 1e-14 * libm::sin(30.0 * PI * x));
        let single =
            compute_c_lbi(&DMatrix::from_column_slice(s.len(), 1, s.as_slice()), &sp).unwrap();
        let padded =
            compute_c_lbi(&DMatrix::from_columns(&[s.clone(), noise, s * 0.0]), &sp).unwrap();
        assert!((padded.lambda_max - single.lambda_max).abs() < 1e-8 * single.lambda_max);
    }

    #[test]
    fn full_stochastic_rank_has_no_mode_correction() {
        let f = fixture(8, 1, 3, 3, None, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let v = random(7, 3, &mut rng);
        let p = project_tangent_oblique(&f.field, &f.ops, &f.measure, &v).unwrap();
        assert_eq!(p.dy.amax(), 0.0);
        assert!((p.to_tensor(&f.field) - &v).amax() < 1e-12 * v.amax());
    }

    #[test]
    fn c_lbi_bounds_gradients_of_random_combinations() {
        let f = fixture(20, 2, 6, 3, Some(0.0), 10);
        let c = compute_c_lbi(f.field.physical(), &f.ops.spatial).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let z = random(6, 3, &mut rng);
            let v = f.field.physical() * z.transpose();
            let (mut g, mut m) = (0.0, 0.0);
            for l in 0..6 {
                let col = v.column(l);
                g += f.measure.weights()[l]
                    * f.ops
                        .spatial
                        .stiffness
                        .bilinear(col.as_slice(), col.as_slice());
                m += f.measure.weights()[l]
                    * f.ops.spatial.mass.bilinear(col.as_slice(), col.as_slice());
            }
            assert!(libm::sqrt(g) <= c.constant * libm::sqrt(m) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn model_error_vanishes_at_full_rank() {
        let f = fixture(8, 1, 3, 3, None, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let load = random(7, 3, &mut rng);
        let nu = estimate_model_error(&f.field, &f.ops, &f.measure, &load).unwrap();
        assert!(nu < 1e-10, "{nu}");
    }

    #[test]
    fn model_error_of_residual_in_the_skewed_tangent_image() {
        let f = fixture(12, 2, 5, 2, None, 14);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let w = TangentVector {
            du: random(f.field.n_interior(), 2, &mut rng),
            dy: apply_complement(&f.measure, f.field.stochastic(), &random(5, 2, &mut rng)),
        }
        .to_tensor(&f.field);
        // F_l = Ã_l û_l − G_* w_l makes the residual the functional (·, H* w).
        let full = f.field.expand();
        let mut load = DMatrix::zeros(full.nrows(), 5);
        for l in 0..5 {
            let au = f.ops.system[l].mul_vec(full.column(l).as_slice());
            let gw = f.ops.adjoint_mass.mul_vec(w.column(l).as_slice());
            for i in 0..full.nrows() {
                load[(i, l)] = au[i] - gw[i];
            }
        }
        let nu = estimate_model_error(&f.field, &f.ops, &f.measure, &load).unwrap();
        assert!(nu < 1e-10, "{nu}");
        let generic = estimate_model_error(
            &f.field,
            &f.ops,
            &f.measure,
            &random(full.nrows(), 5, &mut rng),
        )
        .unwrap();
        assert!(generic > 1e-3);
    }

    /// Brute-force ν̂ by maximising over the complement explicitly.
    #[test]
    fn model_error_matches_dense_supremum() {
        let f = fixture(6, 1, 3, 1, None, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let load = random(5, 3, &mut rng);
        let nu = estimate_model_error(&f.field, &f.ops, &f.measure, &load).unwrap();
        // Matrix of v ↦ P⊥v in vec form, then sup of a linear functional.
        let (n, nc) = (5, 3);
        let p = n * nc;
        let mut pmat = DMatrix::zeros(p, p);
        for k in 0..p {
            let mut e = DMatrix::zeros(n, nc);
            e[(k % n, k / n)] = 1.0;
            let pe = project_tangent_oblique(&f.field, &f.ops, &f.measure, &e)
                .unwrap()
                .to_tensor(&f.field);
            let col = &e - pe;
            for r in 0..p {
                pmat[(r, k)] = col[(r % n, r / n)];
            }
        }
        let full = f.field.expand();
        let mut rho = DMatrix::zeros(p, 1);
        for l in 0..nc {
            let au = f.ops.system[l].mul_vec(full.column(l).as_slice());
            for i in 0..n {
                rho[(l * n + i, 0)] = f.measure.weights()[l] * (au[i] - load[(i, l)]);
            }
        }
        let mass = f.ops.spatial.mass.to_dense();
        let mut gram = DMatrix::zeros(p, p);
        for l in 0..nc {
            gram.view_mut((l * n, l * n), (n, n))
                .copy_from(&(&mass * f.measure.weights()[l]));
        }
        let g = pmat.transpose() * rho;
        let dual = (g.transpose() * gram.try_inverse().unwrap() * &g)[(0, 0)];
        assert!(
            (libm::sqrt(dual) - nu).abs() < 1e-10 * nu.max(1.0),
            "{} vs {nu}",
            libm::sqrt(dual)
        );
    }

    #[test]
    fn truncation_of_a_low_rank_tensor_is_exact() {
        let f = fixture(10, 2, 7, 2, Some(0.0), 18);
        let full = f.field.expand();
        let (t, err) = truncate(&full, &f.ops.spatial, &f.measure, 3).unwrap();
        assert!(err < 1e-10 * full.amax());
        assert!((t.expand() - &full).amax() < 1e-12 * full.amax());
        let _ = &f.space;
    }
}
