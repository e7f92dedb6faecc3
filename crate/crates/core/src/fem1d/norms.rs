use super::assembly::SpatialOperators;
use super::space::LagrangeSpace;
use crate::band::BandMatrix;
use crate::error::{Error, Result};

/// `√(vᵀ G v)` for an SPD Gram matrix `G`.
pub fn weighted_norm(gram: &BandMatrix, v: &[f64]) -> Result<f64> {
    if v.len() != gram.dim() {
        return Err(Error::Dimension {
            context: "weighted_norm",
            expected: gram.dim(),
            found: v.len(),
        });
    }
    Ok(libm::sqrt(gram.bilinear(v, v).max(0.0)))
}

pub fn l2_norm(ops: &SpatialOperators, v: &[f64]) -> Result<f64> {
    weighted_norm(&ops.mass, v)
}

pub fn h1_seminorm(ops: &SpatialOperators, v: &[f64]) -> Result<f64> {
    weighted_norm(&ops.stiffness, v)
}

/// Which quantity of the FEM function is compared with the analytic one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Derivative {
    Value,
    First,
}

/// `‖u_h − g‖_{L²(D)}` (or of the first derivatives) by element-wise Gauss
/// quadrature exact to degree `2k + 4`.
pub fn evaluate_against_analytic(
    space: &LagrangeSpace,
    coeffs: &[f64],
    analytic: impl Fn(f64) -> f64,
    derivative: Derivative,
) -> Result<f64> {
    space.check(coeffs.len())?;
    let rule = space.error_rule();
    let mut acc = 0.0;
    space.for_each_point(&rule, |e, x, wh, shape| {
        let (v, d) = space.eval_on_element(coeffs, e, shape);
        let diff = match derivative {
            Derivative::Value => v - analytic(x),
            Derivative::First => d - analytic(x),
        };
        acc += wh * diff * diff;
    });
    Ok(libm::sqrt(acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem1d::{assemble, Mesh1D};
    use core::f64::consts::PI;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn space(n: usize, k: usize) -> LagrangeSpace {
        LagrangeSpace::new(Mesh1D::unit(n).unwrap(), k).unwrap()
    }

    #[test]
    fn zero_vector_and_dimension_errors() {
        let s = space(8, 1);
        let ops = assemble(&s, 1.0);
        assert_eq!(l2_norm(&ops, &[0.0; 7]).unwrap(), 0.0);
        assert!(l2_norm(&ops, &[0.0; 6]).is_err());
        assert!(evaluate_against_analytic(&s, &[0.0; 8], |_| 0.0, Derivative::Value).is_err());
    }

    #[test]
    fn mass_norm_matches_explicit_loop() {
        let s = space(9, 2);
        let ops = assemble(&s, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v: alloc::vec::Vec<f64> = (0..s.n_interior())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let dense = ops.mass.to_dense();
        let mut acc = 0.0;
        for i in 0..v.len() {
            for j in 0..v.len() {
                acc += v[i] * dense[(i, j)] * v[j];
            }
        }
        assert!((l2_norm(&ops, &v).unwrap() - libm::sqrt(acc)).abs() < 1e-14);
        // Same value through quadrature against the zero function.
        let q = evaluate_against_analytic(&s, &v, |_| 0.0, Derivative::Value).unwrap();
        assert!((q - libm::sqrt(acc)).abs() < 1e-13);
    }

    #[test]
    fn sine_interpolant_norm_and_rate() {
        let f = |x: f64| libm::sin(2.0 * PI * x);
        let s = space(256, 1);
        let ops = assemble(&s, 1.0);
        let c = s.interpolate(f);
        let n = l2_norm(&ops, c.as_slice()).unwrap();
        assert!((n - libm::sqrt(0.5)).abs() < 1e-4);
        let e1 = {
            let s = space(16, 1);
            let c = s.interpolate(f);
            evaluate_against_analytic(&s, c.as_slice(), f, Derivative::Value).unwrap()
        };
        let e2 = {
            let s = space(32, 1);
            let c = s.interpolate(f);
            evaluate_against_analytic(&s, c.as_slice(), f, Derivative::Value).unwrap()
        };
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn polynomials_are_represented_exactly() {
        let s = space(5, 2);
        let g = |x: f64| 3.0 * x * (1.0 - x);
        let c = s.interpolate(g);
        assert!(evaluate_against_analytic(&s, c.as_slice(), g, Derivative::Value).unwrap() < 1e-12);
        let dg = |x: f64| 3.0 - 6.0 * x;
        assert!(
            evaluate_against_analytic(&s, c.as_slice(), dg, Derivative::First).unwrap() < 1e-12
        );
        let s = space(5, 1);
        let g = |x: f64| 0.0 * x;
        let c = s.interpolate(g);
        assert!(evaluate_against_analytic(&s, c.as_slice(), g, Derivative::Value).unwrap() < 1e-12);
    }
}
