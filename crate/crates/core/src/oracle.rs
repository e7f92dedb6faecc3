//! Reference solutions: the manufactured problem, the per-point full-tensor
//! solver, elliptic and L² projections, and best rank-`R` truncation.

use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::band::relative_residual;
use crate::dlr::{truncate, LowRankField};
use crate::error::{Error, Result};
use crate::fem1d::{assemble_vector, LagrangeSpace, SpatialOperators};
use crate::measure::DiscreteMeasure;
use crate::stepper::TimeGrid;
use crate::supg::{assemble_load, ProblemCoefficients, SupgOperators};

/// `u(t, x, ω) = exp(x sin(2πω(t+1))) sin(2πx)` with `c = 1 + ω`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedProblem {
    pub epsilon: f64,
    pub advection: f64,
}

impl Default for ManufacturedProblem {
    fn default() -> Self {
        Self {
            epsilon: 1e-8,
            advection: 1.0,
        }
    }
}

/// Finite-difference step used by [`ManufacturedProblem::cross_validate`].
pub const FD_STEP: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-6;

impl ManufacturedProblem {
    pub fn new(epsilon: f64, advection: f64) -> Self {
        Self { epsilon, advection }
    }

    #[inline]
    fn phase(t: f64, omega: f64) -> (f64, f64) {
        let arg = 2.0 * PI * omega * (t + 1.0);
        (libm::sin(arg), 2.0 * PI * omega * libm::cos(arg))
    }

    pub fn solution(&self, t: f64, x: f64, omega: f64) -> f64 {
        let (s, _) = Self::phase(t, omega);
        libm::exp(x * s) * libm::sin(2.0 * PI * x)
    }

    pub fn time_derivative(&self, t: f64, x: f64, omega: f64) -> f64 {
        let (_, s_t) = Self::phase(t, omega);
        x * s_t * self.solution(t, x, omega)
    }

    pub fn space_derivative(&self, t: f64, x: f64, omega: f64) -> f64 {
        let (s, _) = Self::phase(t, omega);
        let k = 2.0 * PI;
        libm::exp(x * s) * (s * libm::sin(k * x) + k * libm::cos(k * x))
    }

    pub fn second_space_derivative(&self, t: f64, x: f64, omega: f64) -> f64 {
        let (s, _) = Self::phase(t, omega);
        let k = 2.0 * PI;
        libm::exp(x * s) * ((s * s - k * k) * libm::sin(k * x) + 2.0 * k * s * libm::cos(k * x))
    }

    pub fn reaction(x: f64, omega: f64) -> f64 {
        let _ = x;
        1.0 + omega
    }

    /// `f = ∂_t u − ε ∂_xx u + b ∂_x u + c u`.
    pub fn forcing(&self, t: f64, x: f64, omega: f64) -> f64 {
        self.time_derivative(t, x, omega) - self.epsilon * self.second_space_derivative(t, x, omega)
            + self.advection * self.space_derivative(t, x, omega)
            + Self::reaction(x, omega) * self.solution(t, x, omega)
    }

    /// Compares every closed-form derivative and `f` with central differences
    /// (step `1e-6`) on an `n_t × n_x` grid for each `ω`. The second
    /// derivative is differenced from the closed-form first derivative.
    /// Returns the largest relative discrepancy.
    pub fn cross_validate(
        &self,
        t_final: f64,
        n_t: usize,
        n_x: usize,
        omegas: &[f64],
    ) -> Result<f64> {
        let h = FD_STEP;
        let mut worst: f64 = 0.0;
        let check = |quantity: &'static str,
                     exact: f64,
                     approx: f64,
                     t: f64,
                     x: f64,
                     w: f64|
         -> Result<f64> {
            let rel = (exact - approx).abs() / exact.abs().max(1.0);
            if !(rel <= FD_TOL) {
                return Err(Error::Derivation {
                    quantity,
                    t,
                    x,
                    omega: w,
                    relative: rel,
                });
            }
            Ok(rel)
        };
        for &w in omegas {
            for it in 0..n_t {
                let t = t_final * it as f64 / (n_t.max(2) - 1) as f64;
                for ix in 0..n_x {
                    let x = ix as f64 / (n_x.max(2) - 1) as f64;
                    let ut = (self.solution(t + h, x, w) - self.solution(t - h, x, w)) / (2.0 * h);
                    let ux = (self.solution(t, x + h, w) - self.solution(t, x - h, w)) / (2.0 * h);
                    let uxx = (self.space_derivative(t, x + h, w)
                        - self.space_derivative(t, x - h, w))
                        / (2.0 * h);
                    let f = ut - self.epsilon * uxx
                        + self.advection * ux
                        + Self::reaction(x, w) * self.solution(t, x, w);
                    worst = worst.max(check(
                        "time derivative",
                        self.time_derivative(t, x, w),
                        ut,
                        t,
                        x,
                        w,
                    )?);
                    worst = worst.max(check(
                        "space derivative",
                        self.space_derivative(t, x, w),
                        ux,
                        t,
                        x,
                        w,
                    )?);
                    worst = worst.max(check(
                        "second space derivative",
                        self.second_space_derivative(t, x, w),
                        uxx,
                        t,
                        x,
                        w,
                    )?);
                    worst = worst.max(check("forcing", self.forcing(t, x, w), f, t, x, w)?);
                }
            }
        }
        Ok(worst)
    }

    /// Coefficients for `ω ∈ [0, 1]` (`c_0 = 1`, `c_sup = 2`). The derivative
    /// cross-check runs first and its failure is returned as an error.
    pub fn coefficients(&self) -> Result<ProblemCoefficients> {
        self.cross_validate(1.0, 20, 20, &[0.0, 0.25, 0.5, 0.75, 1.0])?;
        let me = *self;
        Ok(
            ProblemCoefficients::constant(self.epsilon, self.advection, 1.0)
                .with_reaction(Self::reaction, 1.0, 2.0)
                .with_forcing(move |t, x, w| me.forcing(t, x, w))
                .with_initial(move |x, w| me.solution(0.0, x, w)),
        )
    }
}

/// Backward-Euler SUPG solve at every collocation point independently:
/// `(M_H/Δt + Ã_l) x_l^{n+1} = M_H x_l^n/Δt + F_l^{n+1}`.
/// `observer` sees every state including the initial one.
pub fn full_tensor_solve(
    space: &LagrangeSpace,
    coeffs: &ProblemCoefficients,
    ops: &SupgOperators,
    measure: &DiscreteMeasure,
    grid: &TimeGrid,
    initial: &DMatrix<f64>,
    mut observer: impl FnMut(usize, f64, &DMatrix<f64>) -> Result<()>,
) -> Result<DMatrix<f64>> {
    let n = ops.n_interior();
    let nc = measure.len();
    if initial.nrows() != n || initial.ncols() != nc {
        return Err(Error::Dimension {
            context: "full_tensor_solve initial state",
            expected: n * nc,
            found: initial.nrows() * initial.ncols(),
        });
    }
    let dt = grid.dt;
    let systems: Vec<_> = (0..nc)
        .map(|l| {
            crate::band::BandMatrix::combination(&[
                (1.0 / dt, &ops.skew_mass),
                (1.0, &ops.system[l]),
            ])
        })
        .collect();
    let lus = systems.iter().map(|s| s.lu()).collect::<Result<Vec<_>>>()?;
    let mut x = initial.clone();
    observer(0, 0.0, &x)?;
    for step in 1..=grid.n_steps {
        let t = grid.time(step);
        let load = assemble_load(space, coeffs, ops.delta, measure, t);
        let mx = ops.skew_mass.mul_dense(&x);
        let mut next = DMatrix::zeros(n, nc);
        for l in 0..nc {
            let rhs: Vec<f64> = (0..n).map(|i| mx[(i, l)] / dt + load[(i, l)]).collect();
            let sol = lus[l].solve(&rhs);
            if sol.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { step });
            }
            let res = relative_residual(&systems[l], &sol, &rhs);
            if res > 1e-11 {
                return Err(Error::ResidualTooLarge {
                    context: "full-tensor step",
                    residual: res,
                });
            }
            next.column_mut(l).copy_from_slice(&sol);
        }
        x = next;
        observer(step, t, &x)?;
    }
    Ok(x)
}

fn solve_spd(
    matrix: &crate::band::BandMatrix,
    rhs: &[f64],
    context: &'static str,
) -> Result<DVector<f64>> {
    let sol = matrix.lu()?.solve(rhs);
    let res = relative_residual(matrix, &sol, rhs);
    if res > 1e-11 {
        return Err(Error::ResidualTooLarge {
            context,
            residual: res,
        });
    }
    Ok(DVector::from_vec(sol))
}

/// Ritz projection: `(∇(u − πu), ∇v) = 0` for all interior `v`, from the
/// derivative `u'` of the target.
pub fn elliptic_projection(
    space: &LagrangeSpace,
    spatial: &SpatialOperators,
    derivative: impl Fn(f64) -> f64,
) -> Result<DVector<f64>> {
    let rhs = assemble_vector(space, &space.error_rule(), |x, p, i| {
        derivative(x) * p.d1[i]
    });
    solve_spd(&spatial.stiffness, &rhs, "elliptic projection")
}

/// Elliptic projection at every collocation point of `∂_x u(x, ω)`.
pub fn elliptic_projection_tensor(
    space: &LagrangeSpace,
    spatial: &SpatialOperators,
    measure: &DiscreteMeasure,
    derivative: impl Fn(f64, f64) -> f64,
) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(space.n_interior(), measure.len());
    for (l, &w) in measure.points().iter().enumerate() {
        let col = elliptic_projection(space, spatial, |x| derivative(x, w))?;
        out.column_mut(l).copy_from(&col);
    }
    Ok(out)
}

/// L² projection onto the interior space.
pub fn l2_projection(
    space: &LagrangeSpace,
    spatial: &SpatialOperators,
    f: impl Fn(f64) -> f64,
) -> Result<DVector<f64>> {
    let rhs = assemble_vector(space, &space.error_rule(), |x, p, i| f(x) * p.value[i]);
    solve_spd(&spatial.mass, &rhs, "L2 projection")
}

pub fn l2_projection_tensor(
    space: &LagrangeSpace,
    spatial: &SpatialOperators,
    measure: &DiscreteMeasure,
    f: impl Fn(f64, f64) -> f64,
) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(space.n_interior(), measure.len());
    for (l, &w) in measure.points().iter().enumerate() {
        let col = l2_projection(space, spatial, |x| f(x, w))?;
        out.column_mut(l).copy_from(&col);
    }
    Ok(out)
}

/// How the initial datum is brought into the finite element space before
/// truncation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialCondition {
    /// Per-point L² projection.
    #[default]
    Projection,
    /// Nodal interpolation.
    Interpolation,
}

/// Rank-`R` initial state and the truncation error of the discrete datum.
pub fn initial_field(
    space: &LagrangeSpace,
    spatial: &SpatialOperators,
    measure: &DiscreteMeasure,
    u0: impl Fn(f64, f64) -> f64,
    rank: usize,
    mode: InitialCondition,
) -> Result<(LowRankField, f64)> {
    let full = match mode {
        InitialCondition::Projection => l2_projection_tensor(space, spatial, measure, u0)?,
        InitialCondition::Interpolation => {
            let coords = space.interior_coords();
            DMatrix::from_fn(coords.len(), measure.len(), |i, l| {
                u0(coords[i], measure.points()[l])
            })
        }
    };
    truncate(&full, spatial, measure, rank)
}

/// `‖π_h u − T_R(π_h u)‖_{L²_μ(L²)}` for the L² projection `π_h u` of a
/// snapshot and its best rank-`R` truncation `T_R`.
pub fn best_truncation_error(
    space: &LagrangeSpace,
    spatial: &SpatialOperators,
    measure: &DiscreteMeasure,
    u: impl Fn(f64, f64) -> f64,
    rank: usize,
) -> Result<f64> {
    let full = l2_projection_tensor(space, spatial, measure, u)?;
    Ok(truncate(&full, spatial, measure, rank)?.1)
}

/// Best truncation error at every time of `grid` (`t_1..=t_N`) and its
/// accumulation `√(Σ Δt e_i²)`.
pub fn best_truncation_history(
    space: &LagrangeSpace,
    spatial: &SpatialOperators,
    measure: &DiscreteMeasure,
    u: impl Fn(f64, f64, f64) -> f64,
    rank: usize,
    grid: &TimeGrid,
) -> Result<(Vec<f64>, f64)> {
    let mut per_step = Vec::with_capacity(grid.n_steps);
    let mut acc = 0.0;
    for n in 1..=grid.n_steps {
        let t = grid.time(n);
        let e = best_truncation_error(space, spatial, measure, |x, w| u(t, x, w), rank)?;
        acc += grid.dt * e * e;
        per_step.push(e);
    }
    Ok((per_step, libm::sqrt(acc)))
}
