//! Experiment drivers: single runs, convergence and rank studies.

use std::fmt;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use supg_dlr_core::dlr::truncate;
use supg_dlr_core::fem1d::{
    assemble, estimate_inverse_constant, LagrangeSpace, Mesh1D, SpatialOperators,
    DEFAULT_POWER_MAX_ITER, DEFAULT_POWER_TOL,
};
use supg_dlr_core::measure::DiscreteMeasure;
use supg_dlr_core::metrics::{
    fit_order, snapshot_errors, ErrorAccumulator, ErrorSummary, OrderFit, SnapshotErrors,
};
use supg_dlr_core::oracle::{
    best_truncation_history, full_tensor_solve, initial_field, l2_projection_tensor,
    ManufacturedProblem,
};
use supg_dlr_core::stepper::{RunSummary, Stepper, StepperOptions, TimeGrid};
use supg_dlr_core::supg::{
    assemble_supg, select_delta, validate_coefa, CoefficientReport, ProblemCoefficients,
    StabilizationParams, SupgOperators,
};
use supg_dlr_core::Error;

use crate::config::{ConfigError, ExperimentConfig};

/// One CSV row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub h: f64,
    pub dt: f64,
    pub delta: f64,
    pub rank: usize,
    pub err_l2_final: f64,
    pub err_supg_accum: f64,
    pub err_combined: f64,
    /// `‖π_h u(T) − T_R(π_h u(T))‖`
    pub trunc_err: f64,
    pub nu_hat_max: f64,
    pub c_lbi_max: f64,
    pub stab_lhs: f64,
    pub stab_rhs: f64,
    pub lemma3_max: f64,
    pub prop1_max: f64,
    pub wall_time_s: f64,
}

/// Per-run quantities that are not part of the CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelDiagnostics {
    pub level: u32,
    pub n_elements: usize,
    pub n_steps: usize,
    pub inverse_constant: f64,
    pub stabilization: StabilizationParams,
    pub coefficients: CoefficientReport,
    /// Largest `λ_max` behind `c_lbi_max`.
    pub c_lbi_lambda_max: f64,
    /// First step where the stability inequality failed.
    pub stability_violated_at: Option<usize>,
    /// Smallest `rhs − lhs` over all prefixes.
    pub stability_margin: f64,
    pub orthonormality_max: f64,
    pub reparametrization_max: f64,
    pub coupling_iterations_max: usize,
    /// `‖u(T) − T_R(π_h u(T))‖`, the best rank-`R` error in the finite
    /// element space.
    pub best_approx_err: f64,
    /// `‖u(T) − π_h u(T)‖`
    pub projection_err: f64,
    /// `√(Σ Δt ‖π_h u(t_i) − T_R(π_h u(t_i))‖²)`
    pub trunc_err_accum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelOutcome {
    pub record: LevelRecord,
    pub diagnostics: LevelDiagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelFailure {
    pub level: u32,
    pub rank: usize,
    pub error: DriverError,
}

/// Slope fitted over the records of one rank.
#[derive(Debug, Clone, PartialEq)]
pub struct RankFit {
    pub rank: usize,
    pub fit: Option<OrderFit>,
    /// Mesh exponents of the records, in the order of `fit.levels`' indices.
    pub levels: Vec<u32>,
}

/// Records in deterministic (rank, level) order plus failures and fits.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunReport {
    pub records: Vec<LevelRecord>,
    pub diagnostics: Vec<LevelDiagnostics>,
    pub failures: Vec<LevelFailure>,
    pub fits: Vec<RankFit>,
    pub degree: usize,
    pub dt_coeff: f64,
    pub dt_exponent: f64,
}

impl RunReport {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn fit_for(&self, rank: usize) -> Option<&OrderFit> {
        self.fits
            .iter()
            .find(|f| f.rank == rank)
            .and_then(|f| f.fit.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DriverError {
    Config(ConfigError),
    Core(Error),
    /// Missing trajectory snapshots or similar driver inconsistencies.
    Driver(String),
}

impl DriverError {
    /// 2 for configuration and validation problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            DriverError::Config(_) => 2,
            DriverError::Core(e) => match e {
                Error::Configuration(_)
                | Error::Validation(_)
                | Error::UnsupportedDegree(_)
                | Error::InvalidMesh(_)
                | Error::InvalidMeasure(_) => 2,
                _ => 3,
            },
            DriverError::Driver(_) => 3,
        }
    }
}

impl fmt::Display for DriverError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriverError::Config(e) => write!(f, "configuration error: {e}"),
            DriverError::Core(e) => write!(f, "{e}"),
            DriverError::Driver(m) => write!(f, "driver error: {m}"),
        }
    }
}

impl std::error::Error for DriverError {}

impl From<Error> for DriverError {
    fn from(e: Error) -> Self {
        DriverError::Core(e)
    }
}

impl From<ConfigError> for DriverError {
    fn from(e: ConfigError) -> Self {
        DriverError::Config(e)
    }
}

pub type DriverResult<T> = Result<T, DriverError>;

/// Everything that depends on the mesh level but not on the rank.
pub struct Level {
    pub exponent: u32,
    pub problem: ManufacturedProblem,
    pub coeffs: ProblemCoefficients,
    pub space: LagrangeSpace,
    pub spatial: SpatialOperators,
    pub measure: DiscreteMeasure,
    pub inverse_constant: f64,
    pub grid: TimeGrid,
    pub params: StabilizationParams,
    pub coefficient_report: CoefficientReport,
    pub ops: SupgOperators,
}

impl fmt::Debug for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Level")
            .field("exponent", &self.exponent)
            .field("h", &self.space.h())
            .field("dt", &self.grid.dt)
            .field("delta", &self.params.delta)
            .finish()
    }
}

impl Level {
    /// Mesh `h = 2^{-i}`, `C_I`, `Δt = C h^p`, `δ` and the operators.
    pub fn prepare(config: &ExperimentConfig, exponent: u32) -> DriverResult<Self> {
        Self::build(config, exponent, None)
    }

    /// As [`Level::prepare`] with a prescribed time grid.
    pub fn with_grid(
        config: &ExperimentConfig,
        exponent: u32,
        grid: TimeGrid,
    ) -> DriverResult<Self> {
        Self::build(config, exponent, Some(grid))
    }

    fn build(
        config: &ExperimentConfig,
        exponent: u32,
        grid: Option<TimeGrid>,
    ) -> DriverResult<Self> {
        config.validate()?;
        let problem = ManufacturedProblem::new(config.epsilon, config.advection);
        let coeffs = problem.coefficients()?;
        let space = LagrangeSpace::new(Mesh1D::unit(1usize << exponent)?, config.degree)?;
        let measure = DiscreteMeasure::equispaced(config.n_collocation)?;
        let coefficient_report = validate_coefa(&coeffs, &space, &measure)?;
        let spatial = assemble(&space, coeffs.advection);
        let inverse_constant =
            estimate_inverse_constant(&space, &spatial, DEFAULT_POWER_TOL, DEFAULT_POWER_MAX_ITER)?
                .value;
        let h = space.h();
        let grid = match grid {
            Some(g) => g,
            None => TimeGrid::with_max_step(
                config.t_final,
                config.dt_coeff * h.powf(config.dt_exponent()),
            )?,
        };
        let params = select_delta(h, grid.dt, &coeffs, inverse_constant, config.delta_safety)?;
        let ops = assemble_supg(&space, &coeffs, &params, &measure)?;
        Ok(Self {
            exponent,
            problem,
            coeffs,
            space,
            spatial,
            measure,
            inverse_constant,
            grid,
            params,
            coefficient_report,
            ops,
        })
    }

    pub fn snapshot_errors(&self, t: f64, tensor: &DMatrix<f64>) -> DriverResult<SnapshotErrors> {
        let p = self.problem;
        Ok(snapshot_errors(
            &self.space,
            &self.coeffs,
            self.params.delta,
            &self.measure,
            tensor,
            |x, w| p.solution(t, x, w),
            |x, w| p.space_derivative(t, x, w),
        )?)
    }

    /// L² projection of `u(t)` and its distance to `u(t)`.
    pub fn projected_solution(&self, t: f64) -> DriverResult<(DMatrix<f64>, f64)> {
        let p = self.problem;
        let proj = l2_projection_tensor(&self.space, &self.spatial, &self.measure, |x, w| {
            p.solution(t, x, w)
        })?;
        let err = self.snapshot_errors(t, &proj)?.l2_sq.sqrt();
        Ok((proj, err))
    }

    /// Pure truncation error and best rank-`R` error at `t`.
    pub fn truncation_errors(&self, t: f64, rank: usize) -> DriverResult<(f64, f64)> {
        let (proj, proj_err) = self.projected_solution(t)?;
        let (_, trunc) = truncate(&proj, &self.spatial, &self.measure, rank)?;
        // u − π_h u is L²-orthogonal to the finite element space.
        Ok((trunc, (proj_err * proj_err + trunc * trunc).sqrt()))
    }

    fn stepper_options(&self, config: &ExperimentConfig) -> StepperOptions {
        StepperOptions {
            strict_stability: config.strict_stability,
            ..StepperOptions::default()
        }
    }

    /// DLR run at rank `R` together with its error metrics.
    pub fn run_dlr(
        &self,
        config: &ExperimentConfig,
        rank: usize,
    ) -> DriverResult<(RunSummary, ErrorSummary)> {
        let p = self.problem;
        let (initial, _) = initial_field(
            &self.space,
            &self.spatial,
            &self.measure,
            |x, w| p.solution(0.0, x, w),
            rank,
            config.ic_mode,
        )?;
        let stepper = Stepper::new(
            &self.space,
            &self.coeffs,
            &self.ops,
            &self.measure,
            self.grid.dt,
            self.stepper_options(config),
        )?;
        let mut acc = ErrorAccumulator::default();
        let mut failure = None;
        let summary = stepper.run(initial, &self.grid, |n, t, state| {
            if n > 0 {
                match self.snapshot_errors(t, &state.expand()) {
                    Ok(e) => acc.add(self.grid.dt, e),
                    Err(e) => failure = Some(e),
                }
            }
            Ok(())
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        self.check_snapshots(&acc)?;
        Ok((summary, acc.summary()))
    }

    /// Per-point implicit SUPG solve from the untruncated initial tensor.
    pub fn run_full_tensor(&self) -> DriverResult<(DMatrix<f64>, ErrorSummary)> {
        let (initial, _) = self.projected_solution(0.0)?;
        let mut acc = ErrorAccumulator::default();
        let mut failure = None;
        let last = full_tensor_solve(
            &self.space,
            &self.coeffs,
            &self.ops,
            &self.measure,
            &self.grid,
            &initial,
            |n, t, x| {
                if n > 0 {
                    match self.snapshot_errors(t, x) {
                        Ok(e) => acc.add(self.grid.dt, e),
                        Err(e) => failure = Some(e),
                    }
                }
                Ok(())
            },
        )?;
        if let Some(e) = failure {
            return Err(e);
        }
        self.check_snapshots(&acc)?;
        Ok((last, acc.summary()))
    }

    /// Error metrics of the full-tensor trajectory truncated to rank `R` at
    /// every step.
    pub fn truncated_reference(&self, rank: usize) -> DriverResult<ErrorSummary> {
        let (initial, _) = self.projected_solution(0.0)?;
        let mut acc = ErrorAccumulator::default();
        let mut failure = None;
        full_tensor_solve(
            &self.space,
            &self.coeffs,
            &self.ops,
            &self.measure,
            &self.grid,
            &initial,
            |n, t, x| {
                if n > 0 {
                    let errors = truncate(x, &self.spatial, &self.measure, rank)
                        .map_err(DriverError::from)
                        .and_then(|(f, _)| self.snapshot_errors(t, &f.expand()));
                    match errors {
                        Ok(e) => acc.add(self.grid.dt, e),
                        Err(e) => failure = Some(e),
                    }
                }
                Ok(())
            },
        )?;
        if let Some(e) = failure {
            return Err(e);
        }
        self.check_snapshots(&acc)?;
        Ok(acc.summary())
    }

    /// Error metrics of the truncated projection of the exact solution.
    pub fn run_injected(&self, rank: usize) -> DriverResult<ErrorSummary> {
        let mut acc = ErrorAccumulator::default();
        for n in 1..=self.grid.n_steps {
            let t = self.grid.time(n);
            let (proj, _) = self.projected_solution(t)?;
            let (field, _) = truncate(&proj, &self.spatial, &self.measure, rank)?;
            acc.add(self.grid.dt, self.snapshot_errors(t, &field.expand())?);
        }
        self.check_snapshots(&acc)?;
        Ok(acc.summary())
    }

    fn check_snapshots(&self, acc: &ErrorAccumulator) -> DriverResult<()> {
        if acc.steps() != self.grid.n_steps {
            return Err(DriverError::Driver(format!(
                "expected {} snapshots, got {}",
                self.grid.n_steps,
                acc.steps()
            )));
        }
        Ok(())
    }

    /// One CSV record and its diagnostics.
    pub fn evaluate(&self, config: &ExperimentConfig, rank: usize) -> DriverResult<LevelOutcome> {
        let start = Instant::now();
        let (trunc_err, best_approx_err) = self.truncation_errors(config.t_final, rank)?;
        let projection_err = (best_approx_err * best_approx_err - trunc_err * trunc_err)
            .max(0.0)
            .sqrt();
        let p = self.problem;
        let (_, trunc_err_accum) = best_truncation_history(
            &self.space,
            &self.spatial,
            &self.measure,
            |t, x, w| p.solution(t, x, w),
            rank,
            &self.grid,
        )?;
        let mut diagnostics = LevelDiagnostics {
            level: self.exponent,
            n_elements: self.space.mesh().n_elements(),
            n_steps: self.grid.n_steps,
            inverse_constant: self.inverse_constant,
            stabilization: self.params,
            coefficients: self.coefficient_report,
            c_lbi_lambda_max: 0.0,
            stability_violated_at: None,
            stability_margin: 0.0,
            orthonormality_max: 0.0,
            reparametrization_max: 0.0,
            coupling_iterations_max: 0,
            best_approx_err,
            projection_err,
            trunc_err_accum,
        };
        let mut record = LevelRecord {
            h: self.space.h(),
            dt: self.grid.dt,
            delta: self.params.delta,
            rank,
            err_l2_final: 0.0,
            err_supg_accum: 0.0,
            err_combined: 0.0,
            trunc_err,
            nu_hat_max: 0.0,
            c_lbi_max: 0.0,
            stab_lhs: 0.0,
            stab_rhs: 0.0,
            lemma3_max: 0.0,
            prop1_max: 0.0,
            wall_time_s: 0.0,
        };
        let errors = if config.inject_exact {
            self.run_injected(rank)?
        } else {
            let (summary, errors) = self.run_dlr(config, rank)?;
            let m = &summary.maxima;
            record.nu_hat_max = m.nu_hat;
            record.c_lbi_max = m.c_lbi;
            record.lemma3_max = m.lemma3;
            record.prop1_max = m.prop1;
            let ledger = &summary.stability;
            record.stab_lhs = ledger.lhs.last().copied().unwrap_or(0.0);
            record.stab_rhs = ledger.rhs.last().copied().unwrap_or(0.0);
            diagnostics.c_lbi_lambda_max = m.c_lbi_lambda;
            diagnostics.stability_violated_at = ledger.violated_at;
            diagnostics.stability_margin = ledger
                .lhs
                .iter()
                .zip(&ledger.rhs)
                .map(|(l, r)| r - l)
                .fold(f64::INFINITY, f64::min);
            diagnostics.orthonormality_max = m.orthonormality_defect;
            diagnostics.reparametrization_max = m.reparametrization_defect;
            diagnostics.coupling_iterations_max = m.coupling_iterations;
            errors
        };
        record.err_l2_final = errors.l2_final;
        record.err_supg_accum = errors.supg_accum;
        record.err_combined = errors.combined;
        record.wall_time_s = start.elapsed().as_secs_f64();
        Ok(LevelOutcome {
            record,
            diagnostics,
        })
    }
}

/// Prepares the level and evaluates one rank.
pub fn run_single(
    config: &ExperimentConfig,
    exponent: u32,
    rank: usize,
) -> DriverResult<LevelOutcome> {
    Level::prepare(config, exponent)?.evaluate(config, rank)
}

/// Runs every (rank, level) pair. Pairs run in parallel; the report lists
/// them in rank-major, level-minor order. Failed pairs are recorded and the
/// remaining ones still reported.
pub fn sweep(config: &ExperimentConfig, ranks: &[usize]) -> DriverResult<RunReport> {
    config.validate()?;
    let levels: Vec<DriverResult<Level>> = config
        .levels
        .par_iter()
        .map(|&i| Level::prepare(config, i))
        .collect();
    let jobs: Vec<(usize, usize)> = ranks
        .iter()
        .flat_map(|&r| (0..levels.len()).map(move |li| (r, li)))
        .collect();
    let outcomes: Vec<DriverResult<LevelOutcome>> = jobs
        .par_iter()
        .map(|&(r, li)| match &levels[li] {
            Ok(level) => level.evaluate(config, r),
            Err(e) => Err(e.clone()),
        })
        .collect();
    let mut report = RunReport {
        degree: config.degree,
        dt_coeff: config.dt_coeff,
        dt_exponent: config.dt_exponent(),
        ..RunReport::default()
    };
    for (&(rank, li), outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok(o) => {
                report.records.push(o.record);
                report.diagnostics.push(o.diagnostics);
            }
            Err(error) => report.failures.push(LevelFailure {
                level: config.levels[li],
                rank,
                error,
            }),
        }
    }
    for &rank in ranks {
        let (levels, (h, err)): (Vec<u32>, (Vec<f64>, Vec<f64>)) = report
            .records
            .iter()
            .zip(&report.diagnostics)
            .filter(|(r, _)| r.rank == rank)
            .map(|(r, d)| (d.level, (r.h, r.err_combined)))
            .unzip();
        report.fits.push(RankFit {
            rank,
            fit: fit_order(&h, &err),
            levels,
        });
    }
    Ok(report)
}

/// h-sweep at the configured rank.
pub fn convergence_study(config: &ExperimentConfig) -> DriverResult<RunReport> {
    if config.levels.len() < 3 {
        return Err(ConfigError(format!(
            "a convergence study needs at least 3 levels, found {}",
            config.levels.len()
        ))
        .into());
    }
    sweep(config, &[config.rank])
}

/// Same levels for every rank in `config.ranks`.
pub fn rank_study(config: &ExperimentConfig) -> DriverResult<RunReport> {
    if config.ranks.is_empty() {
        return Err(ConfigError("a rank study needs at least one rank".into()).into());
    }
    sweep(config, &config.ranks)
}

/// Assumption report of `diagnose`.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnosis {
    pub level: u32,
    pub h: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub inverse_constant: f64,
    pub stabilization: StabilizationParams,
    pub coefficients: CoefficientReport,
    pub continuity_constant: f64,
    pub fd_worst: f64,
}

pub fn diagnose(config: &ExperimentConfig) -> DriverResult<Vec<Diagnosis>> {
    config.validate()?;
    let problem = ManufacturedProblem::new(config.epsilon, config.advection);
    let omegas: Vec<f64> = (1..=5).map(|i| i as f64 / 5.0).collect();
    let fd_worst = problem.cross_validate(config.t_final, 20, 20, &omegas)?;
    config
        .levels
        .iter()
        .map(|&i| {
            let level = Level::prepare(config, i)?;
            Ok(Diagnosis {
                level: i,
                h: level.space.h(),
                dt: level.grid.dt,
                n_steps: level.grid.n_steps,
                inverse_constant: level.inverse_constant,
                stabilization: level.params,
                coefficients: level.coefficient_report,
                continuity_constant: supg_dlr_core::supg::continuity_constant(
                    level.inverse_constant,
                    supg_dlr_core::fem1d::POINCARE_UNIT_INTERVAL,
                    &level.coeffs,
                ),
                fd_worst,
            })
        })
        .collect()
}
