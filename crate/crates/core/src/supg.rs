//! Stabilisation parameter, per-collocation SUPG matrices and the SUPG norm.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::band::BandMatrix;
use crate::error::{Error, Result};
use crate::fem1d::{assemble, assemble_matrix, assemble_vector, LagrangeSpace, SpatialOperators};
use crate::measure::DiscreteMeasure;

pub type Reaction = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type Forcing = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
pub type InitialDatum = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Data of `∂_t u − εΔu + b·∇u + c u = f` with homogeneous Dirichlet
/// conditions. `reaction`, `initial` take `(x, ω)`, `forcing` takes
/// `(t, x, ω)`.
#[derive(Clone)]
pub struct ProblemCoefficients {
    pub epsilon: f64,
    pub advection: f64,
    pub reaction: Reaction,
    /// Lower bound `c_0 > 0` of the reaction coefficient.
    pub c0: f64,
    /// Upper bound of the reaction coefficient.
    pub c_sup: f64,
    pub forcing: Forcing,
    pub initial: InitialDatum,
}

impl ProblemCoefficients {
    /// Constant reaction `c`, zero forcing and zero initial datum.
    pub fn constant(epsilon: f64, advection: f64, c: f64) -> Self {
        Self {
            epsilon,
            advection,
            reaction: Arc::new(move |_, _| c),
            c0: c,
            c_sup: c,
            forcing: Arc::new(|_, _, _| 0.0),
            initial: Arc::new(|_, _| 0.0),
        }
    }

    pub fn with_forcing(
        mut self,
        f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.forcing = Arc::new(f);
        self
    }

    pub fn with_initial(mut self, u0: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.initial = Arc::new(u0);
        self
    }

    pub fn with_reaction(
        mut self,
        c: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        c0: f64,
        c_sup: f64,
    ) -> Self {
        self.reaction = Arc::new(c);
        self.c0 = c0;
        self.c_sup = c_sup;
        self
    }
}

impl fmt::Debug for ProblemCoefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemCoefficients")
            .field("epsilon", &self.epsilon)
            .field("advection", &self.advection)
            .field("c0", &self.c0)
            .field("c_sup", &self.c_sup)
            .finish_non_exhaustive()
    }
}

/// Uniform SUPG parameter together with the bounds it was chosen from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilizationParams {
    pub delta: f64,
    pub dt: f64,
    pub safety: f64,
    /// `1/(2 c_sup)`
    pub bound_reaction: f64,
    /// `h²/(2 ε C_I²)`
    pub bound_diffusion: f64,
    /// `h/(|b| C_I)`
    pub bound_advection: f64,
    /// `Δt/4`
    pub bound_time: f64,
}

impl StabilizationParams {
    /// A prescribed `δ` with no admissibility bookkeeping. Useful for
    /// switching stabilisation off.
    pub fn with_delta(delta: f64, dt: f64) -> Self {
        Self {
            delta,
            dt,
            safety: 1.0,
            bound_reaction: f64::INFINITY,
            bound_diffusion: f64::INFINITY,
            bound_advection: f64::INFINITY,
            bound_time: f64::INFINITY,
        }
    }

    /// Whether `δ` respects all four bounds.
    pub fn is_admissible(&self) -> bool {
        let tol = 1.0 + 1e-12;
        self.delta >= 0.0
            && self.delta <= self.bound_reaction * tol
            && self.delta <= self.bound_diffusion * tol
            && self.delta <= self.bound_advection * tol
            && self.delta <= self.bound_time * tol
    }
}

/// `δ = σ · min(1/(2c_sup), h²/(2εC_I²), h/(|b|C_I), Δt/4)`.
pub fn select_delta(
    h: f64,
    dt: f64,
    coeffs: &ProblemCoefficients,
    inverse_constant: f64,
    safety: f64,
) -> Result<StabilizationParams> {
    let b = coeffs.advection.abs();
    let eps = coeffs.epsilon;
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(Error::Configuration(format!(
            "delta safety factor {safety} outside (0, 1]"
        )));
    }
    if !(h > 0.0 && dt > 0.0 && inverse_constant > 0.0) {
        return Err(Error::Configuration(String::from(
            "mesh size, time step and inverse constant must be positive",
        )));
    }
    if !(b * h > 2.0 * eps) {
        return Err(Error::Configuration(format!(
            "advection-dominated check fails: |b| h = {} is not greater than 2 eps = {}",
            b * h,
            2.0 * eps
        )));
    }
    if !(coeffs.c_sup > 0.0) {
        return Err(Error::Configuration(String::from("c_sup must be positive")));
    }
    let bound_reaction = 1.0 / (2.0 * coeffs.c_sup);
    let bound_diffusion = h * h / (2.0 * eps * inverse_constant * inverse_constant);
    let bound_advection = h / (b * inverse_constant);
    let bound_time = dt / 4.0;
    let min = bound_reaction
        .min(bound_diffusion)
        .min(bound_advection)
        .min(bound_time);
    Ok(StabilizationParams {
        delta: safety * min,
        dt,
        safety,
        bound_reaction,
        bound_diffusion,
        bound_advection,
        bound_time,
    })
}

/// Matrices of the stabilised form at every collocation point.
///
/// `system[l]` holds `vᵀ Ã_l u = a_SUPG(u, v; ω_l)`; `skew_mass` holds
/// `vᵀ M_H u = (u, v + δ b·∇v)`; `adjoint_mass` holds
/// `uᵀ G_* w = (u, w − δ b·∇w)`.
#[derive(Debug, Clone)]
pub struct SupgOperators {
    pub spatial: SpatialOperators,
    pub epsilon: f64,
    pub delta: f64,
    pub skew_mass: BandMatrix,
    pub adjoint_mass: BandMatrix,
    /// `εA + B + δ(−ε S_Δb + S_bb)`, the ω-independent part of `Ã_l`.
    pub deterministic: BandMatrix,
    /// `(c(·, ω_l) u, v)`
    pub reaction: Vec<BandMatrix>,
    /// `(c(·, ω_l) u, b·∇v)`
    pub reaction_streamline: Vec<BandMatrix>,
    pub system: Vec<BandMatrix>,
}

impl SupgOperators {
    pub fn n_interior(&self) -> usize {
        self.spatial.mass.dim()
    }

    pub fn n_collocation(&self) -> usize {
        self.system.len()
    }

    /// `C_l + δ R_l`, the ω-dependent part of `Ã_l`.
    pub fn reaction_part(&self, l: usize) -> BandMatrix {
        BandMatrix::combination(&[
            (1.0, &self.reaction[l]),
            (self.delta, &self.reaction_streamline[l]),
        ])
    }

    /// Gram matrix of `‖·‖²_SUPG` at `ω_l`: `εA + δ S_bb + C_l`.
    pub fn norm_gram(&self, l: usize) -> BandMatrix {
        BandMatrix::combination(&[
            (self.epsilon, &self.spatial.stiffness),
            (self.delta, &self.spatial.streamline),
            (1.0, &self.reaction[l]),
        ])
    }

    /// `‖v + δ b·∇v‖²` for a deterministic field.
    pub fn skew_test_norm_sq(&self, v: &[f64]) -> f64 {
        let s = &self.spatial;
        s.mass.bilinear(v, v)
            + 2.0 * self.delta * s.mass_streamline.bilinear(v, v)
            + self.delta * self.delta * s.streamline.bilinear(v, v)
    }

    /// `Σ_l m_l x_lᵀ Ã_l y_l = a_SUPG(y, x)` for full tensors.
    pub fn form(&self, measure: &DiscreteMeasure, y: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
        measure
            .weights()
            .iter()
            .enumerate()
            .map(|(l, m)| {
                m * self.system[l].bilinear(x.column(l).as_slice(), y.column(l).as_slice())
            })
            .sum()
    }

    /// `‖X‖²_{L²_μ(L²)}` for a full tensor.
    pub fn l2_norm_sq(&self, measure: &DiscreteMeasure, x: &DMatrix<f64>) -> f64 {
        measure
            .weights()
            .iter()
            .enumerate()
            .map(|(l, m)| {
                let c = x.column(l);
                m * self.spatial.mass.bilinear(c.as_slice(), c.as_slice())
            })
            .sum()
    }

    /// `(X, H Y)` summed over collocation points.
    pub fn skew_pairing(
        &self,
        measure: &DiscreteMeasure,
        x: &DMatrix<f64>,
        y: &DMatrix<f64>,
    ) -> f64 {
        measure
            .weights()
            .iter()
            .enumerate()
            .map(|(l, m)| {
                m * self
                    .skew_mass
                    .bilinear(y.column(l).as_slice(), x.column(l).as_slice())
            })
            .sum()
    }
}

/// Number of random vectors per collocation point in the coercivity check.
pub const COERCIVITY_SAMPLES: usize = 8;

/// Assembles `Ã_l` for every collocation point and checks
/// `vᵀÃ_l v ≥ ½‖v‖²_SUPG` on random vectors.
pub fn assemble_supg(
    space: &LagrangeSpace,
    coeffs: &ProblemCoefficients,
    params: &StabilizationParams,
    measure: &DiscreteMeasure,
) -> Result<SupgOperators> {
    let spatial = assemble(space, coeffs.advection);
    let delta = params.delta;
    let eps = coeffs.epsilon;
    let b = coeffs.advection;
    let rule = space.assembly_rule();
    let skew_mass =
        BandMatrix::combination(&[(1.0, &spatial.mass), (delta, &spatial.mass_streamline)]);
    let adjoint_mass = BandMatrix::combination(&[
        (1.0, &spatial.mass),
        (-delta, &spatial.mass_streamline.transpose()),
    ]);
    let deterministic = BandMatrix::combination(&[
        (eps, &spatial.stiffness),
        (1.0, &spatial.convection),
        (-eps * delta, &spatial.laplacian_streamline),
        (delta, &spatial.streamline),
    ]);
    let mut reaction = Vec::with_capacity(measure.len());
    let mut reaction_streamline = Vec::with_capacity(measure.len());
    let mut system = Vec::with_capacity(measure.len());
    for &omega in measure.points() {
        let c = &coeffs.reaction;
        let cl = assemble_matrix(space, &rule, |x, p, j, i| {
            c(x, omega) * p.value[j] * p.value[i]
        });
        let rl = assemble_matrix(space, &rule, |x, p, j, i| {
            c(x, omega) * p.value[j] * b * p.d1[i]
        });
        let al = BandMatrix::combination(&[(1.0, &deterministic), (1.0, &cl), (delta, &rl)]);
        reaction.push(cl);
        reaction_streamline.push(rl);
        system.push(al);
    }
    let ops = SupgOperators {
        spatial,
        epsilon: eps,
        delta,
        skew_mass,
        adjoint_mass,
        deterministic,
        reaction,
        reaction_streamline,
        system,
    };
    check_coercivity(&ops, COERCIVITY_SAMPLES, 0x5eed)?;
    Ok(ops)
}

/// Smallest observed `vᵀÃ_l v / ‖v‖²_SUPG,l` over random vectors. Fails
/// when it drops below ½ (up to `1e-10`).
pub fn check_coercivity(ops: &SupgOperators, samples: usize, seed: u64) -> Result<f64> {
    let n = ops.n_interior();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    let mut v = alloc::vec![0.0; n];
    for l in 0..ops.n_collocation() {
        let gram = ops.norm_gram(l);
        for _ in 0..samples {
            v.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
            let a = ops.system[l].bilinear(&v, &v);
            let nrm = gram.bilinear(&v, &v);
            if nrm <= 0.0 {
                continue;
            }
            let ratio = a / nrm;
            worst = worst.min(ratio);
            if ratio < 0.5 - 1e-10 {
                return Err(Error::Stabilization {
                    collocation: l,
                    ratio,
                });
            }
        }
    }
    Ok(worst)
}

/// Load vectors `(f(t, ·, ω_l), φ_i + δ b φ_i')` as the columns of an
/// `N_int × N_C` matrix.
pub fn assemble_load(
    space: &LagrangeSpace,
    coeffs: &ProblemCoefficients,
    delta: f64,
    measure: &DiscreteMeasure,
    t: f64,
) -> DMatrix<f64> {
    let rule = space.error_rule();
    let b = coeffs.advection;
    let f = &coeffs.forcing;
    let mut out = DMatrix::zeros(space.n_interior(), measure.len());
    for (l, &omega) in measure.points().iter().enumerate() {
        let col = assemble_vector(space, &rule, |x, p, i| {
            f(t, x, omega) * (p.value[i] + delta * b * p.d1[i])
        });
        out.column_mut(l).copy_from_slice(&col);
    }
    out
}

/// `‖f(t)‖²_{L²_μ(L²(D))}` by quadrature of the continuous forcing.
pub fn forcing_norm_sq(
    space: &LagrangeSpace,
    coeffs: &ProblemCoefficients,
    measure: &DiscreteMeasure,
    t: f64,
) -> f64 {
    let rule = space.error_rule();
    let f = &coeffs.forcing;
    let mut total = 0.0;
    for (&omega, &m) in measure.points().iter().zip(measure.weights()) {
        let mut acc = 0.0;
        space.for_each_point(&rule, |_, x, wh, _| {
            let v = f(t, x, omega);
            acc += wh * v * v;
        });
        total += m * acc;
    }
    total
}

/// `‖X‖_SUPG` of a full `N_int × N_C` tensor.
pub fn supg_norm(ops: &SupgOperators, measure: &DiscreteMeasure, x: &DMatrix<f64>) -> Result<f64> {
    if x.nrows() != ops.n_interior() || x.ncols() != measure.len() {
        return Err(Error::Dimension {
            context: "supg_norm",
            expected: ops.n_interior() * measure.len(),
            found: x.nrows() * x.ncols(),
        });
    }
    let mut acc = 0.0;
    for (l, m) in measure.weights().iter().enumerate() {
        let c = x.column(l);
        acc += m * ops.norm_gram(l).bilinear(c.as_slice(), c.as_slice());
    }
    Ok(libm::sqrt(acc.max(0.0)))
}

/// Constant `C₁ = (C_I + 2)|b| + 2 C_P c_sup` of the continuity bound
/// `a_SUPG(u, v) ≤ C₁ ‖∇u‖ ‖v‖`.
pub fn continuity_constant(
    inverse_constant: f64,
    poincare: f64,
    coeffs: &ProblemCoefficients,
) -> f64 {
    (inverse_constant + 2.0) * coeffs.advection.abs() + 2.0 * poincare * coeffs.c_sup
}

/// Sampled coefficient bounds and the advection-dominance ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientReport {
    pub reaction_min: f64,
    pub reaction_max: f64,
    /// `|b| h / (2ε)`; above one in the advection-dominated regime.
    pub advection_ratio: f64,
    /// Always zero for a constant speed.
    pub divergence: f64,
}

/// Samples `c` at every (quadrature point, collocation point) pair and checks
/// `ε > 0`, `c_0 ≤ c ≤ c_sup`, `c_0 > 0` and `|b| h > 2ε`. All violations are
/// listed in the error.
pub fn validate_coefa(
    coeffs: &ProblemCoefficients,
    space: &LagrangeSpace,
    measure: &DiscreteMeasure,
) -> Result<CoefficientReport> {
    let mut issues = Vec::new();
    if !(coeffs.epsilon > 0.0) {
        issues.push(format!("epsilon = {} is not positive", coeffs.epsilon));
    }
    if !(coeffs.c0 > 0.0) {
        issues.push(format!("c_0 = {} is not positive", coeffs.c0));
    }
    let rule = space.error_rule();
    let mut cmin = f64::INFINITY;
    let mut cmax = f64::NEG_INFINITY;
    for &omega in measure.points() {
        space.for_each_point(&rule, |_, x, _, _| {
            let c = (coeffs.reaction)(x, omega);
            cmin = cmin.min(c);
            cmax = cmax.max(c);
        });
    }
    if !(cmin > 0.0) {
        issues.push(format!(
            "reaction coefficient reaches {cmin}, c_0 > 0 fails"
        ));
    }
    if cmin < coeffs.c0 {
        issues.push(format!(
            "reaction coefficient {cmin} below the declared c_0 = {}",
            coeffs.c0
        ));
    }
    if cmax > coeffs.c_sup {
        issues.push(format!(
            "reaction coefficient {cmax} above the declared c_sup = {}",
            coeffs.c_sup
        ));
    }
    let h = space.h();
    let b = coeffs.advection.abs();
    if !(b * h > 2.0 * coeffs.epsilon) {
        issues.push(format!(
            "advection-dominated check fails: |b| h = {} <= 2 eps = {}",
            b * h,
            2.0 * coeffs.epsilon
        ));
    }
    if !issues.is_empty() {
        return Err(Error::Validation(issues));
    }
    Ok(CoefficientReport {
        reaction_min: cmin,
        reaction_max: cmax,
        advection_ratio: b * h / (2.0 * coeffs.epsilon),
        divergence: 0.0,
    })
}
