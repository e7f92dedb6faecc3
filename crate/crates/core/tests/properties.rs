//! Randomised invariants of the discretisation and the integrator.

use nalgebra::DMatrix;
use proptest::prelude::*;

use supg_dlr_core::dlr::{project_tangent_oblique, LowRankField};
use supg_dlr_core::fem1d::{
    assemble, estimate_inverse_constant, LagrangeSpace, Mesh1D, DEFAULT_POWER_MAX_ITER,
    DEFAULT_POWER_TOL, POINCARE_UNIT_INTERVAL,
};
use supg_dlr_core::measure::{weighted_orthonormalize, weighted_truncated_svd, DiscreteMeasure};
use supg_dlr_core::oracle::{initial_field, InitialCondition};
use supg_dlr_core::stepper::{Stepper, StepperOptions, TimeGrid};
use supg_dlr_core::supg::{
    assemble_supg, check_coercivity, select_delta, ProblemCoefficients, SupgOperators,
};

fn measure_strategy() -> impl Strategy<Value = DiscreteMeasure> {
    (2usize..9)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(0.0..1.0f64, n),
                prop::collection::vec(0.1..1.0f64, n),
            )
        })
        .prop_map(|(mut points, raw)| {
            points.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let total: f64 = raw.iter().sum();
            DiscreteMeasure::new(points, raw.iter().map(|w| w / total).collect()).unwrap()
        })
}

fn matrix(rows: usize, cols: usize, values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |i, j| {
        values[(i * cols + j) % values.len()] + (i * j) as f64 * 0.01
    })
}

struct Setup {
    space: LagrangeSpace,
    measure: DiscreteMeasure,
    coeffs: ProblemCoefficients,
    ops: SupgOperators,
    dt: f64,
}

fn setup(degree: usize, n_el: usize, nc: usize, eps: f64, b: f64, sigma: f64) -> Setup {
    let space = LagrangeSpace::new(Mesh1D::unit(n_el).unwrap(), degree).unwrap();
    let measure = DiscreteMeasure::equispaced(nc).unwrap();
    let coeffs = ProblemCoefficients::constant(eps, b, 1.0)
        .with_reaction(|x, w| 1.0 + w * x, 1.0, 2.0)
        .with_forcing(|t, x, w| (3.0 * x + w).sin() * (1.0 + t))
        .with_initial(|x, w| (std::f64::consts::PI * x).sin() * (1.0 + w) + x * (1.0 - x) * w * w);
    let sp = assemble(&space, b);
    let ci = estimate_inverse_constant(&space, &sp, DEFAULT_POWER_TOL, DEFAULT_POWER_MAX_ITER)
        .unwrap()
        .value;
    let dt = 0.05;
    let params = select_delta(space.h(), dt, &coeffs, ci, sigma).unwrap();
    let ops = assemble_supg(&space, &coeffs, &params, &measure).unwrap();
    Setup {
        space,
        measure,
        coeffs,
        ops,
        dt,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn expectation_is_symmetric_and_bilinear(
        measure in measure_strategy(),
        seed in prop::collection::vec(-2.0..2.0f64, 24),
        a in -3.0..3.0f64,
    ) {
        let n = measure.len();
        let y: Vec<f64> = (0..n).map(|i| seed[i]).collect();
        let z: Vec<f64> = (0..n).map(|i| seed[8 + i]).collect();
        let w: Vec<f64> = (0..n).map(|i| seed[16 + i]).collect();
        let yz = measure.expectation(&y, &z).unwrap();
        prop_assert!((yz - measure.expectation(&z, &y).unwrap()).abs() <= 1e-14);
        let combo: Vec<f64> = y.iter().zip(&w).map(|(p, q)| a * p + q).collect();
        let lhs = measure.expectation(&combo, &z).unwrap();
        let rhs = a * yz + measure.expectation(&w, &z).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        prop_assert!(measure.expectation(&y, &y).unwrap() >= 0.0);
    }

    #[test]
    fn orthonormalisation_is_idempotent(
        measure in measure_strategy(),
        values in prop::collection::vec(-1.0..1.0f64, 64),
        rank in 1usize..4,
    ) {
        let rank = rank.min(measure.len());
        let y = matrix(measure.len(), rank, &values);
        let Ok(qr) = weighted_orthonormalize(&y, &measure, 1e10) else {
            return Ok(());
        };
        let q = qr.modes.values().clone();
        prop_assert!(qr.modes.orthonormality_defect(&measure) <= 1e-12);
        prop_assert!(((&q * &qr.triangular) - &y).amax() <= 1e-10 * (1.0 + y.amax()));
        let again = weighted_orthonormalize(&q, &measure, 1e10).unwrap();
        prop_assert!((again.modes.values() - &q).amax() <= 1e-10);
    }

    #[test]
    fn truncation_error_decreases_with_rank(
        measure in measure_strategy(),
        values in prop::collection::vec(-1.0..1.0f64, 60),
    ) {
        let space = LagrangeSpace::new(Mesh1D::unit(6).unwrap(), 1).unwrap();
        let sp = assemble(&space, 1.0);
        let m = sp.mass.to_dense();
        let c = matrix(space.n_interior(), measure.len(), &values);
        let max_rank = space.n_interior().min(measure.len());
        let mut previous = f64::INFINITY;
        for r in 1..=max_rank {
            let svd = weighted_truncated_svd(&c, &m, &measure, r).unwrap();
            prop_assert!(svd.truncation_error <= previous * (1.0 + 1e-12) + 1e-14);
            previous = svd.truncation_error;
            let s = svd.singular_values.as_slice();
            prop_assert!(s.windows(2).all(|w| w[0] >= w[1]));
        }
        prop_assert!(previous <= 1e-10 * (1.0 + c.amax()));
    }

    #[test]
    fn oblique_projection_is_idempotent(
        degree in 1usize..3,
        n_el in 4usize..12,
        sigma in 0.1..1.0f64,
        values in prop::collection::vec(-1.0..1.0f64, 48),
    ) {
        let s = setup(degree, n_el, 6, 1e-4, 1.0, sigma);
        let n = s.space.n_interior();
        let y = matrix(6, 2, &values);
        let modes = weighted_orthonormalize(&y, &s.measure, 1e10).unwrap().modes;
        let field = LowRankField::new(matrix(n, 2, &values[7..]), modes).unwrap();
        let v = matrix(n, 6, &values[3..]);
        let p1 = project_tangent_oblique(&field, &s.ops, &s.measure, &v).unwrap().to_tensor(&field);
        let p2 = project_tangent_oblique(&field, &s.ops, &s.measure, &p1).unwrap().to_tensor(&field);
        prop_assert!((&p2 - &p1).amax() <= 1e-10 * p1.amax().max(1e-300));
    }

    #[test]
    fn supg_form_is_coercive(
        degree in 1usize..3,
        n_el in 4usize..40,
        eps_exp in -8.0..-2.0f64,
        b in prop::sample::select(vec![-2.0, -0.7, 0.5, 1.0, 1.8]),
        sigma in 0.1..1.0f64,
        seed in 0u64..1000,
    ) {
        let s = setup(degree, n_el, 4, 10f64.powf(eps_exp), b, sigma);
        prop_assert!(check_coercivity(&s.ops, 20, seed).unwrap() >= 0.5);
    }

    #[test]
    fn inverse_inequality_holds(
        degree in 1usize..3,
        n_el in 2usize..30,
        values in prop::collection::vec(-1.0..1.0f64, 60),
    ) {
        let space = LagrangeSpace::new(Mesh1D::unit(n_el).unwrap(), degree).unwrap();
        let sp = assemble(&space, 1.0);
        let ci = estimate_inverse_constant(&space, &sp, DEFAULT_POWER_TOL, DEFAULT_POWER_MAX_ITER)
            .unwrap();
        let n = space.n_interior();
        let v: Vec<f64> = (0..n).map(|i| values[i % values.len()] + 0.1 * i as f64).collect();
        let grad = sp.stiffness.bilinear(&v, &v).sqrt();
        let l2 = sp.mass.bilinear(&v, &v).sqrt();
        prop_assert!(space.h() * grad <= ci.value * l2 * (1.0 + 1e-6));
        // Poincaré on the unit interval with 5% slack.
        prop_assert!(l2 <= 1.05 * POINCARE_UNIT_INTERVAL * grad);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn modes_stay_orthonormal_every_step(
        degree in 1usize..3,
        n_el in 4usize..16,
        nc in 2usize..7,
        rank in 1usize..4,
        sigma in 0.2..1.0f64,
        b in prop::sample::select(vec![-1.0, 1.0]),
    ) {
        let s = setup(degree, n_el, nc, 1e-5, b, sigma);
        let rank = rank.min(nc);
        let sp = assemble(&s.space, b);
        let u0 = s.coeffs.initial.clone();
        let (initial, _) = initial_field(
            &s.space,
            &sp,
            &s.measure,
            |x, w| u0(x, w),
            rank,
            InitialCondition::Projection,
        )
        .unwrap();
        let grid = TimeGrid::new(5.0 * s.dt, 5).unwrap();
        let stepper = Stepper::new(&s.space, &s.coeffs, &s.ops, &s.measure, s.dt, StepperOptions::default())
            .unwrap();
        let mut worst: f64 = 0.0;
        let summary = stepper
            .run(initial, &grid, |_, _, f| {
                worst = worst.max(f.modes().orthonormality_defect(&s.measure));
                Ok(())
            })
            .unwrap();
        prop_assert!(worst <= 1e-12);
        prop_assert!(summary.stability.violated_at.is_none());
    }
}
