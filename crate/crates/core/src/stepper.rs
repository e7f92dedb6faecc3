//! Implicit splitting integrator for the low-rank SUPG system.
//!
//! One step updates the physical modes with the stochastic modes frozen,
//! then the stochastic modes along `(Y^n)^⊥`, then re-orthonormalises. The
//! reaction coefficient depends on `ω`, so the physical update couples to the
//! stochastic increment through `E[c Y_j δY_k]`. Starting from the
//! sequential split, Newton's method on the coupled pair `(Ũ, Ỹ)` makes
//! `u^{n+1} = Ũ Ỹᵀ` satisfy the discrete variational identity on the whole
//! tangent space. With `max_coupling_iterations = 1` the plain sequential
//! split is kept.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::band::{relative_residual, BandMatrix};
use crate::dlr::{
    apply_complement, compute_c_lbi, BasisInverseConstant, LowRankField, ModelErrorEstimator,
};
use crate::error::{Error, Result};
use crate::fem1d::LagrangeSpace;
use crate::measure::{
    weighted_orthonormalize, DiscreteMeasure, StochasticModes, DEFAULT_MAX_GRAM_CONDITION,
};
use crate::supg::{assemble_load, forcing_norm_sq, supg_norm, ProblemCoefficients, SupgOperators};
use crate::ORTHONORMALITY_TOL;

/// Relative singular-value cutoff of the coupled Newton system.
const SCHUR_RCOND: f64 = 1e-13;

/// Uniform grid `t_n = n Δt`, `Δt = T/N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_final: f64,
    pub n_steps: usize,
    pub dt: f64,
}

impl TimeGrid {
    pub fn new(t_final: f64, n_steps: usize) -> Result<Self> {
        if !(t_final > 0.0) || n_steps == 0 {
            return Err(Error::Configuration(alloc::format!(
                "time grid needs T > 0 and N >= 1 (got T = {t_final}, N = {n_steps})"
            )));
        }
        Ok(Self {
            t_final,
            n_steps,
            dt: t_final / n_steps as f64,
        })
    }

    /// Smallest `N` with `T/N ≤ dt_target`.
    pub fn with_max_step(t_final: f64, dt_target: f64) -> Result<Self> {
        if !(dt_target > 0.0) {
            return Err(Error::Configuration(alloc::format!(
                "target time step {dt_target} is not positive"
            )));
        }
        let ratio = t_final / dt_target;
        let mut n = libm::ceil(ratio) as usize;
        if n > 1 && (ratio - (n - 1) as f64).abs() < 1e-9 * ratio {
            n -= 1;
        }
        Self::new(t_final, n.max(1))
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.n_steps {
            self.t_final
        } else {
            n as f64 * self.dt
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperOptions {
    /// Stop the coupling iteration once the relative Newton step falls
    /// below this, or stalls below `1e3` times this.
    pub coupling_tol: f64,
    /// Newton corrections allowed per step. `1` or less gives the
    /// sequential split without coupling.
    pub max_coupling_iterations: usize,
    pub compute_model_error: bool,
    pub compute_c_lbi: bool,
    pub max_gram_condition: f64,
    /// Fail on the first violated stability inequality.
    pub strict_stability: bool,
    /// Relative residual accepted from the linear solves.
    pub solve_tol: f64,
}

impl Default for StepperOptions {
    fn default() -> Self {
        Self {
            coupling_tol: 1e-13,
            max_coupling_iterations: 30,
            compute_model_error: true,
            compute_c_lbi: true,
            max_gram_condition: DEFAULT_MAX_GRAM_CONDITION,
            strict_stability: false,
            solve_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    pub lemma3_residual: f64,
    pub prop1_residual: f64,
    /// `‖Ũ δYᵀ‖`
    pub udy_norm: f64,
    /// `‖u^{n+1}‖_SUPG`
    pub supg_norm_step: f64,
    pub l2_norm_step: f64,
    pub nu_hat: Option<f64>,
    pub c_lbi: Option<BasisInverseConstant>,
    /// Condition number of the triangular factor `T` of `Ỹ = Y T`.
    pub reorth_t_condition: f64,
    pub orthonormality_defect: f64,
    /// `max |U^{n+1} (Y^{n+1})ᵀ − Ũ Ỹᵀ|` relative to `max |Ũ Ỹᵀ|`.
    pub reparametrization_defect: f64,
    pub coupling_iterations: usize,
    pub physical_residual: f64,
    pub stochastic_residual: f64,
}

/// Result of the stochastic-mode solve.
#[derive(Debug, Clone)]
pub struct StochasticUpdate {
    pub y_tilde: DMatrix<f64>,
    pub delta_y: DMatrix<f64>,
    /// `W̃_ij = (Ũ_i, Ũ_j + δ b·∇Ũ_j)`.
    pub w_tilde: DMatrix<f64>,
    pub residual: f64,
}

/// Per-step integrator bound to one discretisation.
pub struct Stepper<'a> {
    space: &'a LagrangeSpace,
    coeffs: &'a ProblemCoefficients,
    ops: &'a SupgOperators,
    measure: &'a DiscreteMeasure,
    dt: f64,
    options: StepperOptions,
    /// `M_H/Δt + εA + B + δ(−εS_Δb + S_bb)`
    base: BandMatrix,
    /// `C_l + δ R_l`
    reaction: Vec<BandMatrix>,
    estimator: Option<ModelErrorEstimator>,
}

impl<'a> Stepper<'a> {
    pub fn new(
        space: &'a LagrangeSpace,
        coeffs: &'a ProblemCoefficients,
        ops: &'a SupgOperators,
        measure: &'a DiscreteMeasure,
        dt: f64,
        options: StepperOptions,
    ) -> Result<Self> {
        if ops.n_collocation() != measure.len() || ops.n_interior() != space.n_interior() {
            return Err(Error::Dimension {
                context: "stepper operators",
                expected: space.n_interior() * measure.len(),
                found: ops.n_interior() * ops.n_collocation(),
            });
        }
        if !(dt > 0.0) {
            return Err(Error::Configuration(alloc::format!(
                "time step {dt} is not positive"
            )));
        }
        let base =
            BandMatrix::combination(&[(1.0 / dt, &ops.skew_mass), (1.0, &ops.deterministic)]);
        let reaction = (0..measure.len()).map(|l| ops.reaction_part(l)).collect();
        let estimator = if options.compute_model_error {
            Some(ModelErrorEstimator::new(ops)?)
        } else {
            None
        };
        Ok(Self {
            space,
            coeffs,
            ops,
            measure,
            dt,
            options,
            base,
            reaction,
            estimator,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn options(&self) -> &StepperOptions {
        &self.options
    }

    /// Load matrix `F` at time `t`.
    pub fn load(&self, t: f64) -> DMatrix<f64> {
        assemble_load(self.space, self.coeffs, self.ops.delta, self.measure, t)
    }

    /// Physical-mode update: for every `j` and test function `v`,
    /// `Δt⁻¹(Σ_k Ũ_k Y'_k − u^n, H v Y_j) + a_SUPG(Σ_k Ũ_k Y'_k, v Y_j) =
    /// (f, H v Y_j)` with `Y = Y^n` and trial modes `Y'`.
    ///
    /// Unknowns are interleaved as `a R + j` so the block system stays banded.
    pub fn step_physical(
        &self,
        current: &LowRankField,
        trial_modes: &DMatrix<f64>,
        load: &DMatrix<f64>,
    ) -> Result<(DMatrix<f64>, f64)> {
        let n = self.ops.n_interior();
        let r = current.rank();
        let sys = self.physical_system(current.stochastic(), trial_modes);
        let rhs = self.physical_rhs(current, load);
        let lu = sys.lu()?;
        let sol = lu.solve(&rhs);
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: 0 });
        }
        let residual = relative_residual(&sys, &sol, &rhs);
        if residual > self.options.solve_tol {
            return Err(Error::ResidualTooLarge {
                context: "physical-mode system",
                residual,
            });
        }
        let u = DMatrix::from_fn(n, r, |a, j| sol[a * r + j]);
        Ok((u, residual))
    }

    /// Banded matrix of the physical update with test modes `y` and trial
    /// modes `trial`, unknown `(a, k)` at `a R + k`.
    fn physical_system(&self, y: &DMatrix<f64>, trial: &DMatrix<f64>) -> BandMatrix {
        let n = self.ops.n_interior();
        let r = y.ncols();
        let w = self.measure.weights();
        let kb = self.base.lower_bandwidth().max(self.base.upper_bandwidth());
        let bw = (kb + 1) * r - 1;
        let mut sys = BandMatrix::zeros(n * r, bw, bw);
        let gamma = self.measure.cross_gram(y, trial);
        for j in 0..r {
            for k in 0..r {
                let g = gamma[(j, k)];
                if g == 0.0 {
                    continue;
                }
                for a in 0..n {
                    for b in self.base.row_range(a) {
                        sys.add(a * r + j, b * r + k, g * self.base.get(a, b));
                    }
                }
            }
        }
        for (l, m) in w.iter().enumerate() {
            let rc = &self.reaction[l];
            for j in 0..r {
                for k in 0..r {
                    let coef = m * y[(l, j)] * trial[(l, k)];
                    if coef == 0.0 {
                        continue;
                    }
                    for a in 0..n {
                        for b in rc.row_range(a) {
                            sys.add(a * r + j, b * r + k, coef * rc.get(a, b));
                        }
                    }
                }
            }
        }
        sys
    }

    /// `M_H U^n / Δt + F diag(m) Y^n`, interleaved like the unknowns.
    fn physical_rhs(&self, current: &LowRankField, load: &DMatrix<f64>) -> Vec<f64> {
        let n = self.ops.n_interior();
        let r = current.rank();
        let mhu = self.ops.skew_mass.mul_dense(current.physical());
        let fy = load * self.measure.weigh_rows(current.stochastic());
        let mut rhs = alloc::vec![0.0; n * r];
        for a in 0..n {
            for j in 0..r {
                rhs[a * r + j] = mhu[(a, j)] / self.dt + fy[(a, j)];
            }
        }
        rhs
    }

    /// `A'_l = M_H/Δt + Ã_l` applied to `x` at collocation point `l`.
    fn apply_full(&self, l: usize, x: &[f64]) -> Vec<f64> {
        let mut out = self.base.mul_vec(x);
        let extra = self.reaction[l].mul_vec(x);
        for (o, e) in out.iter_mut().zip(extra) {
            *o += e;
        }
        out
    }

    /// Newton iteration on the coupled pair `(Ũ, Ỹ = Y + δY)`, `δY ⊥ Y`.
    ///
    /// With `ρ_l = A'_l Ũ Ỹ_l − M_H u^n_l/Δt − F_l`, the equations are
    /// `ρ diag(m) Y = 0` (physical) and `P^⊥(ρᵀ Ũ) = 0` (stochastic). The
    /// physical block is eliminated through its banded factorisation.
    /// Returns the pair and the number of Newton corrections.
    fn couple(
        &self,
        current: &LowRankField,
        load: &DMatrix<f64>,
        mut u: DMatrix<f64>,
        mut y_tilde: DMatrix<f64>,
        step: usize,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>, usize)> {
        let n = self.ops.n_interior();
        let nc = self.measure.len();
        let r = current.rank();
        let y = current.stochastic();
        let m = self.measure.weights();
        let x_old = current.expand();
        let p_perp = self.measure.complement_projector(y);
        let p_y = DMatrix::identity(nc, nc) - &p_perp;
        let dim = nc * r;
        let mut corrections = 0;
        let mut previous = f64::INFINITY;
        loop {
            if corrections >= self.options.max_coupling_iterations {
                return Err(Error::NotConverged {
                    context: "physical/stochastic coupling",
                    iterations: corrections,
                });
            }
            // Residual and the operators at the current iterate.
            let x = &u * y_tilde.transpose();
            let mut rho = DMatrix::zeros(n, nc);
            let mut au = Vec::with_capacity(nc);
            let mut atu = Vec::with_capacity(nc);
            let mhx = self.ops.skew_mass.mul_dense(&x_old);
            for l in 0..nc {
                let col = self.apply_full(l, x.column(l).as_slice());
                for a in 0..n {
                    rho[(a, l)] = col[a] - mhx[(a, l)] / self.dt - load[(a, l)];
                }
                let mut a_u = DMatrix::zeros(n, r);
                let mut at_u = DMatrix::zeros(n, r);
                for k in 0..r {
                    let uk = u.column(k);
                    a_u.column_mut(k)
                        .copy_from_slice(&self.apply_full(l, uk.as_slice()));
                    let mut t = self.base.transpose().mul_vec(uk.as_slice());
                    let e = self.reaction[l].transpose().mul_vec(uk.as_slice());
                    for (ti, ei) in t.iter_mut().zip(e) {
                        *ti += ei;
                    }
                    at_u.column_mut(k).copy_from_slice(&t);
                }
                au.push(a_u);
                atu.push(at_u);
            }
            let phi = &rho * self.measure.weigh_rows(y);
            let psi = apply_complement(self.measure, y, &(rho.transpose() * &u));

            let sys = self.physical_system(y, &y_tilde);
            let lu = sys.lu()?;
            let to_vec = |mat: &DMatrix<f64>| -> Vec<f64> {
                let mut v = alloc::vec![0.0; n * r];
                for a in 0..n {
                    for j in 0..r {
                        v[a * r + j] = mat[(a, j)];
                    }
                }
                v
            };
            let from_vec = |v: &[f64]| DMatrix::from_fn(n, r, |a, j| v[a * r + j]);
            // J_DU dU before projection: row l = ρ_lᵀ dU + Ỹ_lᵀ dUᵀ A'_lᵀ U.
            let j_du = |du: &DMatrix<f64>| -> DMatrix<f64> {
                let mut out = rho.transpose() * du;
                for l in 0..nc {
                    let g = du.transpose() * &atu[l];
                    let row = y_tilde.row(l) * g;
                    for i in 0..r {
                        out[(l, i)] += row[i];
                    }
                }
                out
            };

            let neg_phi = to_vec(&(-&phi));
            let u0 = from_vec(&lu.solve(&neg_phi));
            let mut schur = DMatrix::zeros(dim, dim);
            let mut sens = Vec::with_capacity(dim);
            for l0 in 0..nc {
                for k0 in 0..r {
                    // Direction a = P^⊥ e_{l0, k0}.
                    let mut jud = DMatrix::zeros(n, r);
                    for l in 0..nc {
                        let p = p_perp[(l, l0)];
                        if p == 0.0 {
                            continue;
                        }
                        for j in 0..r {
                            let c = m[l] * y[(l, j)] * p;
                            jud.column_mut(j).axpy(c, &au[l].column(k0), 1.0);
                        }
                    }
                    let xu = from_vec(&lu.solve(&to_vec(&jud)));
                    let mut col = -j_du(&xu);
                    for l in 0..nc {
                        let p = p_perp[(l, l0)];
                        if p == 0.0 {
                            continue;
                        }
                        // Row l of (A'_l U a_l)ᵀ U = p · (Uᵀ A'_l U_{k0})ᵀ.
                        let v = u.transpose() * au[l].column(k0);
                        for i in 0..r {
                            col[(l, i)] += p * v[i];
                        }
                    }
                    let col = apply_complement(self.measure, y, &col);
                    let c = l0 * r + k0;
                    for l in 0..nc {
                        for j in 0..r {
                            schur[(l * r + j, c)] = col[(l, j)];
                        }
                        schur[(l * r + k0, c)] += p_y[(l, l0)];
                    }
                    sens.push(xu);
                }
            }
            let rhs_mat = -&psi - apply_complement(self.measure, y, &j_du(&u0));
            let rhs = nalgebra::DVector::from_fn(dim, |i, _| rhs_mat[(i / r, i % r)]);
            // Directions of δZ paired with (nearly) vanishing columns of Ũ
            // are undetermined; the pseudo-inverse leaves them untouched.
            let svd = schur.svd(true, true);
            let cutoff = SCHUR_RCOND * svd.singular_values.max();
            let dz = svd
                .solve(&rhs, cutoff)
                .map_err(|_| Error::SingularSystem("coupled Newton system"))?;
            if dz.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { step });
            }
            let mut du = u0;
            for (c, xu) in sens.iter().enumerate() {
                du -= xu * dz[c];
            }
            let dz = DMatrix::from_fn(nc, r, |l, j| dz[l * r + j]);
            let dd = apply_complement(self.measure, y, &dz);
            u += &du;
            let delta = apply_complement(self.measure, y, &(&y_tilde - y + &dd));
            y_tilde = y + delta;
            corrections += 1;
            // Measured on the product: components of Ỹ paired with vanishing
            // columns of Ũ are not determined by the equations.
            let x_new = &u * y_tilde.transpose();
            let scale = x_new.amax();
            let change = if scale == 0.0 {
                0.0
            } else {
                (&x_new - &x).amax() / scale
            };
            let stalled = change > 0.5 * previous && change <= 1e3 * self.options.coupling_tol;
            if change <= self.options.coupling_tol || stalled {
                return Ok((u, y_tilde, corrections));
            }
            previous = change;
        }
    }

    /// Stochastic-mode update: `P_Y^⊥[Δt⁻¹ δY W̃ + G(Y + δY)] = 0` with
    /// `δY ∈ (Y^n)^⊥`, where row `l` of `G(Ỹ)` is `K_l Ỹ_l − Ũᵀ F_l`,
    /// `K_l = Ũᵀ Ã_l Ũ`. Solved for `δY = P_Y^⊥ δZ` from
    /// `P^⊥ L(P^⊥ δZ) + P_Y δZ = −P^⊥ G(Y)`.
    pub fn step_stochastic(
        &self,
        u_tilde: &DMatrix<f64>,
        y: &DMatrix<f64>,
        load: &DMatrix<f64>,
    ) -> Result<StochasticUpdate> {
        let nc = self.measure.len();
        let r = y.ncols();
        let mhu = self.ops.skew_mass.mul_dense(u_tilde);
        let w_tilde = (u_tilde.transpose() * mhu).transpose();
        if u_tilde.amax() == 0.0 {
            return Ok(StochasticUpdate {
                y_tilde: y.clone(),
                delta_y: DMatrix::zeros(nc, r),
                w_tilde,
                residual: 0.0,
            });
        }
        let k: Vec<DMatrix<f64>> = (0..nc)
            .map(|l| u_tilde.transpose() * self.ops.system[l].mul_dense(u_tilde))
            .collect();
        let utf = u_tilde.transpose() * load;
        let g_of = |yy: &DMatrix<f64>| -> DMatrix<f64> {
            let mut g = DMatrix::zeros(nc, r);
            for l in 0..nc {
                let row = &k[l] * yy.row(l).transpose();
                for i in 0..r {
                    g[(l, i)] = row[i] - utf[(i, l)];
                }
            }
            g
        };
        let linear = |d: &DMatrix<f64>| -> DMatrix<f64> {
            let mut out = d * &w_tilde / self.dt;
            for l in 0..nc {
                let row = &k[l] * d.row(l).transpose();
                for i in 0..r {
                    out[(l, i)] += row[i];
                }
            }
            out
        };
        let p_perp = self.measure.complement_projector(y);
        let p_y = DMatrix::identity(nc, nc) - &p_perp;
        let dim = nc * r;
        let mut sys = DMatrix::zeros(dim, dim);
        for l0 in 0..nc {
            for j0 in 0..r {
                let mut a = DMatrix::zeros(nc, r);
                for l in 0..nc {
                    a[(l, j0)] = p_perp[(l, l0)];
                }
                let col = apply_complement(self.measure, y, &linear(&a));
                let c = l0 * r + j0;
                for l in 0..nc {
                    for j in 0..r {
                        sys[(l * r + j, c)] = col[(l, j)];
                    }
                    sys[(l * r + j0, c)] += p_y[(l, l0)];
                }
            }
        }
        let g0 = apply_complement(self.measure, y, &g_of(y));
        let rhs = nalgebra::DVector::from_fn(dim, |i, _| -g0[(i / r, i % r)]);
        let sol = sys.clone().lu().solve(&rhs).ok_or(Error::RankDegeneracy {
            context: "stochastic-mode system",
            column: 0,
            condition: f64::INFINITY,
        })?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: 0 });
        }
        let dz = DMatrix::from_fn(nc, r, |l, j| sol[l * r + j]);
        let delta_y = apply_complement(self.measure, y, &dz);
        let y_tilde = y + &delta_y;
        let eq = apply_complement(self.measure, y, &(linear(&delta_y) + g_of(y)));
        let scale = (&delta_y * &w_tilde / self.dt).amax() + g_of(&y_tilde).amax() + g0.amax();
        let residual = if scale == 0.0 { 0.0 } else { eq.amax() / scale };
        if residual > self.options.solve_tol {
            return Err(Error::ResidualTooLarge {
                context: "stochastic-mode system",
                residual,
            });
        }
        Ok(StochasticUpdate {
            y_tilde,
            delta_y,
            w_tilde,
            residual,
        })
    }

    /// Relative residual of `P_Y^⊥[Δt⁻¹ δY W̃ + G(Y + δY)] = 0`.
    fn stochastic_residual(
        &self,
        u_tilde: &DMatrix<f64>,
        y: &DMatrix<f64>,
        delta_y: &DMatrix<f64>,
        w_tilde: &DMatrix<f64>,
        load: &DMatrix<f64>,
    ) -> f64 {
        let nc = self.measure.len();
        let r = y.ncols();
        let utf = u_tilde.transpose() * load;
        let g_of = |yy: &DMatrix<f64>| -> DMatrix<f64> {
            let mut g = DMatrix::zeros(nc, r);
            for l in 0..nc {
                let ku = u_tilde.transpose() * self.ops.system[l].mul_dense(u_tilde);
                let row = ku * yy.row(l).transpose();
                for i in 0..r {
                    g[(l, i)] = row[i] - utf[(i, l)];
                }
            }
            g
        };
        let time = delta_y * w_tilde / self.dt;
        let g_new = g_of(&(y + delta_y));
        let eq = apply_complement(self.measure, y, &(&time + &g_new));
        let scale = time.amax() + g_new.amax() + g_of(y).amax();
        relative(eq.amax(), scale)
    }

    /// One full step from `t_n` to `t_{n+1} = t_next`.
    pub fn step(
        &self,
        current: &LowRankField,
        t_next: f64,
        step: usize,
    ) -> Result<(LowRankField, StepDiagnostics)> {
        let load = self.load(t_next);
        self.step_with_load(current, &load, t_next, step)
    }

    pub fn step_with_load(
        &self,
        current: &LowRankField,
        load: &DMatrix<f64>,
        t_next: f64,
        step: usize,
    ) -> Result<(LowRankField, StepDiagnostics)> {
        let y = current.stochastic();
        let (u_split, split_residual) = self
            .step_physical(current, y, load)
            .map_err(|e| at_step(e, step))?;
        let split = self
            .step_stochastic(&u_split, y, load)
            .map_err(|e| at_step(e, step))?;
        // Zero physical modes solve the coupled system as they stand.
        let (u_tilde, update, iterations, physical_residual) =
            if self.options.max_coupling_iterations <= 1 || u_split.amax() == 0.0 {
                (u_split, split, 1, split_residual)
            } else {
                let (u, y_tilde, corrections) = self
                    .couple(current, load, u_split, split.y_tilde, step)
                    .map_err(|e| at_step(e, step))?;
                let w_tilde = (u.transpose() * self.ops.skew_mass.mul_dense(&u)).transpose();
                let delta_y = &y_tilde - y;
                let update = StochasticUpdate {
                    residual: self.stochastic_residual(&u, y, &delta_y, &w_tilde, load),
                    y_tilde,
                    delta_y,
                    w_tilde,
                };
                let sys = self.physical_system(y, &update.y_tilde);
                let r = u.ncols();
                let sol: Vec<f64> = (0..u.nrows() * r).map(|i| u[(i / r, i % r)]).collect();
                let residual = relative_residual(&sys, &sol, &self.physical_rhs(current, load));
                (u, update, 1 + corrections, residual)
            };
        if physical_residual > self.options.solve_tol || update.residual > self.options.solve_tol {
            return Err(Error::ResidualTooLarge {
                context: "coupled step",
                residual: physical_residual.max(update.residual),
            });
        }

        let x_new = &u_tilde * update.y_tilde.transpose();
        let x_old = current.expand();
        if x_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step });
        }
        let lemma3 = self.lemma3_residual(&u_tilde, &update.delta_y, &x_new, load);
        let prop1 = self.prop1_residual(&u_tilde, y, &x_old, &x_new, load);
        let w = &u_tilde * update.delta_y.transpose();
        let udy_norm = libm::sqrt(self.ops.l2_norm_sq(self.measure, &w).max(0.0));

        let nu_hat = match &self.estimator {
            Some(est) => {
                let hat = LowRankField::new(u_tilde.clone(), current.modes().clone())?;
                match est.estimate(&hat, self.ops, self.measure, load) {
                    Ok(v) => Some(v),
                    Err(Error::RankDegeneracy { .. }) => None,
                    Err(e) => return Err(e),
                }
            }
            None => None,
        };
        let c_lbi = if self.options.compute_c_lbi {
            compute_c_lbi(&u_tilde, &self.ops.spatial).ok()
        } else {
            None
        };

        let qr = weighted_orthonormalize(
            &update.y_tilde,
            self.measure,
            self.options.max_gram_condition,
        )
        .map_err(|e| at_step(e, step))?;
        let defect = qr.modes.orthonormality_defect(self.measure);
        if defect > ORTHONORMALITY_TOL {
            return Err(Error::NotOrthonormal { defect });
        }
        let u_next = &u_tilde * qr.triangular.transpose();
        let next = LowRankField::new(
            u_next,
            StochasticModes::new(qr.modes.into_inner(), self.measure)?,
        )?;
        let expanded = next.expand();
        let xmax = x_new.amax();
        let reparametrization_defect = if xmax == 0.0 {
            expanded.amax()
        } else {
            (&expanded - &x_new).amax() / xmax
        };
        let supg = supg_norm(self.ops, self.measure, &expanded)?;
        let l2 = libm::sqrt(self.ops.l2_norm_sq(self.measure, &expanded).max(0.0));
        let diag = StepDiagnostics {
            step,
            time: t_next,
            lemma3_residual: lemma3,
            prop1_residual: prop1,
            udy_norm,
            supg_norm_step: supg,
            l2_norm_step: l2,
            nu_hat,
            c_lbi,
            reorth_t_condition: libm::sqrt(qr.gram_condition),
            orthonormality_defect: defect,
            reparametrization_defect,
            coupling_iterations: iterations,
            physical_residual,
            stochastic_residual: update.residual,
        };
        Ok((next, diag))
    }

    /// `|Δt⁻¹‖w‖² + a_SUPG(u^{n+1}, w) − (f, H w)|` for `w = Ũ δYᵀ`,
    /// relative to `Δt⁻¹‖w‖² + |w|·(|Ã u^{n+1}| + |F|)`, the Cauchy-Schwarz
    /// bound of the three terms in the `diag(m)`-weighted Euclidean norm.
    fn lemma3_residual(
        &self,
        u_tilde: &DMatrix<f64>,
        delta_y: &DMatrix<f64>,
        x_new: &DMatrix<f64>,
        load: &DMatrix<f64>,
    ) -> f64 {
        let w = u_tilde * delta_y.transpose();
        let t1 = self.ops.l2_norm_sq(self.measure, &w) / self.dt;
        let t2 = self.ops.form(self.measure, x_new, &w);
        let m = self.measure.weights();
        let t3: f64 = m
            .iter()
            .enumerate()
            .map(|(l, m)| m * w.column(l).dot(&load.column(l)))
            .sum();
        let (mut ww, mut aa, mut ff) = (0.0, 0.0, 0.0);
        for (l, m) in m.iter().enumerate() {
            let ax = self.ops.system[l].mul_vec(x_new.column(l).as_slice());
            ww += m * w.column(l).norm_squared();
            aa += m * ax.iter().map(|v| v * v).sum::<f64>();
            ff += m * load.column(l).norm_squared();
        }
        let bound = libm::sqrt(ww) * (libm::sqrt(aa) + libm::sqrt(ff));
        relative(t1 + t2 - t3, t1 + bound)
    }

    /// Residual of `Δt⁻¹(u^{n+1} − u^n, H v) + a_SUPG(u^{n+1}, v) = (f, H v)`
    /// over the tangent basis at `Ũ (Y^n)ᵀ`: `{e_a Y_jᵀ}` and `{Ũ_i zᵀ}` with
    /// `z ⊥ Y^n`. Each family is scaled by its largest term magnitude.
    fn prop1_residual(
        &self,
        u_tilde: &DMatrix<f64>,
        y: &DMatrix<f64>,
        x_old: &DMatrix<f64>,
        x_new: &DMatrix<f64>,
        load: &DMatrix<f64>,
    ) -> f64 {
        let nc = self.measure.len();
        let rho1 = self
            .measure
            .weigh_columns(&(self.ops.skew_mass.mul_dense(&(x_new - x_old)) / self.dt));
        let mut rho2 = DMatrix::zeros(x_new.nrows(), nc);
        for l in 0..nc {
            let col = self.ops.system[l].mul_vec(x_new.column(l).as_slice());
            rho2.column_mut(l).copy_from_slice(&col);
        }
        let rho2 = self.measure.weigh_columns(&rho2);
        let rho3 = self.measure.weigh_columns(load);
        let total = &rho1 + &rho2 - &rho3;

        let family_a = |rho: &DMatrix<f64>| rho * y;
        let family_b = |rho: &DMatrix<f64>| {
            let t = u_tilde.transpose() * rho;
            &t - (&t * y) * self.measure.weigh_rows(y).transpose()
        };
        let a_scale = family_a(&rho1).abs() + family_a(&rho2).abs() + family_a(&rho3).abs();
        let b_scale = family_b(&rho1).abs() + family_b(&rho2).abs() + family_b(&rho3).abs();
        let ra = relative(family_a(&total).amax(), a_scale.max());
        let rb = relative(family_b(&total).amax(), b_scale.max());
        ra.max(rb)
    }
}

fn relative(value: f64, scale: f64) -> f64 {
    if scale == 0.0 {
        0.0
    } else {
        value.abs() / scale
    }
}

fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::Divergence { .. } => Error::Divergence { step },
        other => other,
    }
}

/// Running sums of the stability estimate
/// `‖u^N‖² + Σ Δt‖u^n‖²_SUPG ≤ ‖u^0‖² + Δt(4/c_0 + 4δ) Σ ‖f^j‖²`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StabilityLedger {
    /// Left-hand side after each step.
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    /// First step at which `lhs > rhs`.
    pub violated_at: Option<usize>,
}

impl StabilityLedger {
    pub fn holds(&self) -> bool {
        self.violated_at.is_none()
    }
}

/// Maxima of the per-step diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DiagnosticMaxima {
    pub lemma3: f64,
    pub prop1: f64,
    pub nu_hat: f64,
    pub c_lbi: f64,
    pub c_lbi_lambda: f64,
    pub orthonormality_defect: f64,
    pub reparametrization_defect: f64,
    pub coupling_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub initial: LowRankField,
    pub final_state: LowRankField,
    pub diagnostics: Vec<StepDiagnostics>,
    pub stability: StabilityLedger,
    pub maxima: DiagnosticMaxima,
}

impl<'a> Stepper<'a> {
    /// Steps over the whole grid. `observer` sees every state `u^n`,
    /// `n = 0..=N`, with its time.
    pub fn run(
        &self,
        initial: LowRankField,
        grid: &TimeGrid,
        mut observer: impl FnMut(usize, f64, &LowRankField) -> Result<()>,
    ) -> Result<RunSummary> {
        if (grid.dt - self.dt).abs() > 1e-14 * self.dt {
            return Err(Error::Configuration(alloc::format!(
                "grid step {} differs from the stepper step {}",
                grid.dt,
                self.dt
            )));
        }
        if self.ops.delta > self.dt / 4.0 * (1.0 + 1e-12) {
            return Err(Error::Configuration(alloc::format!(
                "delta = {} exceeds dt/4 = {}",
                self.ops.delta,
                self.dt / 4.0
            )));
        }
        observer(0, 0.0, &initial)?;
        let u0_sq = self.ops.l2_norm_sq(self.measure, &initial.expand());
        let factor = self.dt * (4.0 / self.coeffs.c0 + 4.0 * self.ops.delta);
        let mut ledger = StabilityLedger::default();
        let mut supg_sum = 0.0;
        let mut forcing_sum = 0.0;
        let mut maxima = DiagnosticMaxima::default();
        let mut diagnostics = Vec::with_capacity(grid.n_steps);
        let mut state = initial.clone();
        for n in 0..grid.n_steps {
            let t = grid.time(n + 1);
            let (next, d) = self.step(&state, t, n + 1)?;
            supg_sum += self.dt * d.supg_norm_step * d.supg_norm_step;
            forcing_sum += forcing_norm_sq(self.space, self.coeffs, self.measure, t);
            let lhs = d.l2_norm_step * d.l2_norm_step + supg_sum;
            let rhs = u0_sq + factor * forcing_sum;
            ledger.lhs.push(lhs);
            ledger.rhs.push(rhs);
            if lhs > rhs * (1.0 + 1e-12) && ledger.violated_at.is_none() {
                ledger.violated_at = Some(n + 1);
                if self.options.strict_stability {
                    return Err(Error::Stability {
                        step: n + 1,
                        lhs,
                        rhs,
                    });
                }
            }
            maxima.lemma3 = maxima.lemma3.max(d.lemma3_residual);
            maxima.prop1 = maxima.prop1.max(d.prop1_residual);
            maxima.nu_hat = maxima.nu_hat.max(d.nu_hat.unwrap_or(0.0));
            if let Some(c) = d.c_lbi {
                maxima.c_lbi = maxima.c_lbi.max(c.constant);
                maxima.c_lbi_lambda = maxima.c_lbi_lambda.max(c.lambda_max);
            }
            maxima.orthonormality_defect =
                maxima.orthonormality_defect.max(d.orthonormality_defect);
            maxima.reparametrization_defect = maxima
                .reparametrization_defect
                .max(d.reparametrization_defect);
            maxima.coupling_iterations = maxima.coupling_iterations.max(d.coupling_iterations);
            diagnostics.push(d);
            observer(n + 1, t, &next)?;
            state = next;
        }
        Ok(RunSummary {
            initial,
            final_state: state,
            diagnostics,
            stability: ledger,
            maxima,
        })
    }
}
