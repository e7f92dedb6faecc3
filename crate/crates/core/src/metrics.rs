//! Errors against a closed-form solution and order fitting.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fem1d::LagrangeSpace;
use crate::measure::DiscreteMeasure;
use crate::supg::ProblemCoefficients;

/// Squared error norms of one snapshot.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SnapshotErrors {
    /// `‖u − u_h‖²_{L²_μ(L²)}`
    pub l2_sq: f64,
    /// `‖u − u_h‖²_SUPG`
    pub supg_sq: f64,
}

/// Errors of a full tensor against `u(x, ω)` and `∂_x u(x, ω)` by element
/// quadrature of order `2k + 4`.
pub fn snapshot_errors(
    space: &LagrangeSpace,
    coeffs: &ProblemCoefficients,
    delta: f64,
    measure: &DiscreteMeasure,
    tensor: &DMatrix<f64>,
    exact: impl Fn(f64, f64) -> f64,
    exact_dx: impl Fn(f64, f64) -> f64,
) -> Result<SnapshotErrors> {
    if tensor.nrows() != space.n_interior() || tensor.ncols() != measure.len() {
        return Err(Error::Dimension {
            context: "snapshot_errors",
            expected: space.n_interior() * measure.len(),
            found: tensor.nrows() * tensor.ncols(),
        });
    }
    let rule = space.error_rule();
    let b = coeffs.advection;
    let eps = coeffs.epsilon;
    let mut out = SnapshotErrors::default();
    for (l, (&w, &m)) in measure.points().iter().zip(measure.weights()).enumerate() {
        let coeffs_l = tensor.column(l);
        let c = coeffs_l.as_slice();
        let (mut l2, mut grad, mut react) = (0.0, 0.0, 0.0);
        space.for_each_point(&rule, |e, x, wh, shape| {
            let (v, d) = space.eval_on_element(c, e, shape);
            let ev = exact(x, w) - v;
            let ed = exact_dx(x, w) - d;
            l2 += wh * ev * ev;
            grad += wh * ed * ed;
            react += wh * (coeffs.reaction)(x, w) * ev * ev;
        });
        out.l2_sq += m * l2;
        out.supg_sq += m * ((eps + delta * b * b) * grad + react);
    }
    Ok(out)
}

/// `err_L2(T)`, `√(Σ Δt‖e^i‖²_SUPG)` and their sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErrorSummary {
    pub l2_final: f64,
    pub supg_accum: f64,
    pub combined: f64,
}

/// Accumulates snapshot errors over `i = 1..=N`.
#[derive(Debug, Clone, Default)]
pub struct ErrorAccumulator {
    supg_sum: f64,
    last_l2_sq: f64,
    steps: usize,
}

impl ErrorAccumulator {
    pub fn add(&mut self, dt: f64, errors: SnapshotErrors) {
        self.supg_sum += dt * errors.supg_sq;
        self.last_l2_sq = errors.l2_sq;
        self.steps += 1;
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn summary(&self) -> ErrorSummary {
        let l2_final = libm::sqrt(self.last_l2_sq);
        let supg_accum = libm::sqrt(self.supg_sum);
        ErrorSummary {
            l2_final,
            supg_accum,
            combined: l2_final + supg_accum,
        }
    }
}

/// Least-squares slope of `log(err)` against `log(h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    /// Indices (into the input) of the levels that entered the fit.
    pub levels: Vec<usize>,
}

/// Fits the convergence order. The coarsest level is dropped when its error
/// is within a factor 2 of the next finer level. Returns `None` when fewer
/// than two usable levels remain or an error is zero or not finite.
pub fn fit_order(h: &[f64], err: &[f64]) -> Option<OrderFit> {
    if h.len() != err.len() || h.len() < 2 {
        return None;
    }
    let mut idx: Vec<usize> = (0..h.len()).collect();
    idx.sort_by(|&a, &b| {
        h[b].partial_cmp(&h[a])
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    if idx
        .iter()
        .any(|&i| !(err[i] > 0.0 && err[i].is_finite() && h[i] > 0.0))
    {
        return None;
    }
    if idx.len() >= 3 && err[idx[0]] < 2.0 * err[idx[1]] {
        idx.remove(0);
    }
    let n = idx.len() as f64;
    let xs: Vec<f64> = idx.iter().map(|&i| libm::log(h[i])).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| libm::log(err[i])).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    idx.sort_unstable();
    Some(OrderFit {
        slope,
        intercept: my - slope * mx,
        levels: idx,
    })
}
