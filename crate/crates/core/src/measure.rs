//! Discrete probability measure on collocation points and the weighted
//! linear algebra acting along the stochastic direction.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default bound on the condition number of a weighted Gram matrix before a
/// set of stochastic modes is declared rank-degenerate.
pub const DEFAULT_MAX_GRAM_CONDITION: f64 = 1e12;

const WEIGHT_SUM_TOL: f64 = 1e-14;

/// Collocation points `ω_i` with positive weights `m_i` summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidMeasure("no collocation points"));
        }
        if points.len() != weights.len() {
            return Err(Error::Dimension {
                context: "collocation weights",
                expected: points.len(),
                found: weights.len(),
            });
        }
        if weights.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
            return Err(Error::InvalidMeasure("weights must be positive and finite"));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidMeasure("points must be finite"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidMeasure("weights must sum to one"));
        }
        let mut sorted = points.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidMeasure("points must be pairwise distinct"));
        }
        Ok(Self { points, weights })
    }

    /// Equal weights on the given points.
    pub fn uniform(points: Vec<f64>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::InvalidMeasure("no collocation points"));
        }
        let weights = alloc::vec![1.0 / n as f64; n];
        Self::new(points, weights)
    }

    /// Points `i/n` for `i = 1..=n` with equal weights.
    pub fn equispaced(n: usize) -> Result<Self> {
        Self::uniform((1..=n).map(|i| i as f64 / n as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn check_len(&self, context: &'static str, found: usize) -> Result<()> {
        if found != self.len() {
            return Err(Error::Dimension {
                context,
                expected: self.len(),
                found,
            });
        }
        Ok(())
    }

    /// `E[YZ] = Σ m_i Y_i Z_i`.
    pub fn expectation(&self, y: &[f64], z: &[f64]) -> Result<f64> {
        self.check_len("expectation (first argument)", y.len())?;
        self.check_len("expectation (second argument)", z.len())?;
        Ok(self
            .weights
            .iter()
            .zip(y.iter().zip(z))
            .map(|(m, (a, b))| m * a * b)
            .sum())
    }

    /// Weighted cross Gram `Aᵀ diag(m) B` of two column sets.
    pub fn cross_gram(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(a.nrows(), self.len());
        assert_eq!(b.nrows(), self.len());
        let mut scaled = b.clone();
        for (l, m) in self.weights.iter().enumerate() {
            scaled.row_mut(l).scale_mut(*m);
        }
        a.transpose() * scaled
    }

    pub fn gram(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        self.cross_gram(y, y)
    }

    /// `diag(m) A`.
    pub fn weigh_rows(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = a.clone();
        for (l, m) in self.weights.iter().enumerate() {
            out.row_mut(l).scale_mut(*m);
        }
        out
    }

    /// `A diag(m)` for a matrix whose columns are indexed by collocation point.
    pub fn weigh_columns(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(a.ncols(), self.len());
        let mut out = a.clone();
        for (l, m) in self.weights.iter().enumerate() {
            out.column_mut(l).scale_mut(*m);
        }
        out
    }

    /// Matrix of `P_Y^⊥ = I − Y Yᵀ diag(m)` for μ-orthonormal columns `Y`.
    pub fn complement_projector(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.len();
        if y.ncols() == n {
            return DMatrix::zeros(n, n);
        }
        DMatrix::identity(n, n) - y * self.weigh_rows(y).transpose()
    }

    /// μ-orthonormal basis of the complement of `span(Y)`.
    pub fn complement_basis(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.len();
        let r = y.ncols();
        let p = self.complement_projector(y);
        let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n - r);
        let mut basis: Vec<DVector<f64>> = (0..r).map(|j| y.column(j).into_owned()).collect();
        for l in 0..n {
            if cols.len() == n - r {
                break;
            }
            let mut v = p.column(l).into_owned();
            for _ in 0..2 {
                for q in &basis {
                    let c = self.weighted_dot(q.as_slice(), v.as_slice());
                    v -= q * c;
                }
            }
            let nrm = libm::sqrt(self.weighted_dot(v.as_slice(), v.as_slice()));
            if nrm > 1e-8 {
                v /= nrm;
                basis.push(v.clone());
                cols.push(v);
            }
        }
        if cols.len() != n - r {
            return Err(Error::RankDegeneracy {
                context: "complement basis",
                column: cols.len(),
                condition: f64::INFINITY,
            });
        }
        Ok(DMatrix::from_columns(&cols))
    }

    #[inline]
    fn weighted_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(a.iter().zip(b))
            .map(|(m, (x, y))| m * x * y)
            .sum()
    }
}

/// Stochastic modes `Y_j(ω_l)` stored as an `N_C × R` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticModes {
    values: DMatrix<f64>,
}

impl StochasticModes {
    /// Wraps modes that are μ-orthonormal within `1e-12`.
    pub fn new(values: DMatrix<f64>, measure: &DiscreteMeasure) -> Result<Self> {
        if values.nrows() != measure.len() {
            return Err(Error::Dimension {
                context: "stochastic modes",
                expected: measure.len(),
                found: values.nrows(),
            });
        }
        let modes = Self { values };
        let defect = modes.orthonormality_defect(measure);
        if defect > crate::ORTHONORMALITY_TOL {
            return Err(Error::NotOrthonormal { defect });
        }
        Ok(modes)
    }

    pub(crate) fn new_unchecked(values: DMatrix<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.values
    }

    pub fn rank(&self) -> usize {
        self.values.ncols()
    }

    /// `max |YᵀMY − I|`.
    pub fn orthonormality_defect(&self, measure: &DiscreteMeasure) -> f64 {
        let g = measure.gram(&self.values);
        let r = g.nrows();
        let mut d = 0.0_f64;
        for i in 0..r {
            for j in 0..r {
                let target = if i == j { 1.0 } else { 0.0 };
                d = d.max((g[(i, j)] - target).abs());
            }
        }
        d
    }
}

/// Result of [`weighted_orthonormalize`]: `Ỹ = Y T`.
#[derive(Debug, Clone)]
pub struct WeightedQr {
    pub modes: StochasticModes,
    /// Upper triangular with positive diagonal.
    pub triangular: DMatrix<f64>,
    /// Condition number of the weighted Gram matrix `ỸᵀMỸ = TᵀT`.
    pub gram_condition: f64,
}

/// Weighted QR of `Ỹ` by modified Gram-Schmidt with one reorthogonalisation
/// pass.
pub fn weighted_orthonormalize(
    y_tilde: &DMatrix<f64>,
    measure: &DiscreteMeasure,
    max_condition: f64,
) -> Result<WeightedQr> {
    let n = measure.len();
    if y_tilde.nrows() != n {
        return Err(Error::Dimension {
            context: "weighted_orthonormalize",
            expected: n,
            found: y_tilde.nrows(),
        });
    }
    let r = y_tilde.ncols();
    let mut q = y_tilde.clone();
    let mut t = DMatrix::zeros(r, r);
    let min_ratio = 1.0 / libm::sqrt(max_condition);
    for j in 0..r {
        let original = libm::sqrt(
            measure.weighted_dot(y_tilde.column(j).as_slice(), y_tilde.column(j).as_slice()),
        );
        if original == 0.0 || !original.is_finite() {
            return Err(Error::RankDegeneracy {
                context: "weighted_orthonormalize",
                column: j,
                condition: f64::INFINITY,
            });
        }
        for _pass in 0..2 {
            for i in 0..j {
                let c = measure.weighted_dot(q.column(i).as_slice(), q.column(j).as_slice());
                t[(i, j)] += c;
                let qi = q.column(i).into_owned();
                q.column_mut(j).axpy(-c, &qi, 1.0);
            }
        }
        let nrm = libm::sqrt(measure.weighted_dot(q.column(j).as_slice(), q.column(j).as_slice()));
        if nrm < min_ratio * original {
            let ratio = original / nrm.max(f64::MIN_POSITIVE);
            return Err(Error::RankDegeneracy {
                context: "weighted_orthonormalize",
                column: j,
                condition: ratio * ratio,
            });
        }
        t[(j, j)] = nrm;
        q.column_mut(j).scale_mut(1.0 / nrm);
    }
    let gram_condition = if r == 0 {
        1.0
    } else {
        let sv = t.clone().singular_values();
        let smax = sv.max();
        let smin = sv.min();
        (smax / smin) * (smax / smin)
    };
    if gram_condition > max_condition {
        let column = (0..r)
            .min_by(|&a, &b| {
                let ra = t[(a, a)] / t.column(a).norm();
                let rb = t[(b, b)] / t.column(b).norm();
                ra.partial_cmp(&rb).unwrap()
            })
            .unwrap_or(0);
        return Err(Error::RankDegeneracy {
            context: "weighted_orthonormalize",
            column,
            condition: gram_condition,
        });
    }
    Ok(WeightedQr {
        modes: StochasticModes::new_unchecked(q),
        triangular: t,
        gram_condition,
    })
}

/// Best rank-`R` approximation `U Yᵀ` in the norm induced by
/// `M_space ⊗ diag(m)`.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub physical: DMatrix<f64>,
    pub modes: StochasticModes,
    /// All singular values of the transformed matrix, descending.
    pub singular_values: DVector<f64>,
    pub truncation_error: f64,
}

pub fn weighted_truncated_svd(
    c: &DMatrix<f64>,
    m_space: &DMatrix<f64>,
    measure: &DiscreteMeasure,
    rank: usize,
) -> Result<TruncatedSvd> {
    let nh = c.nrows();
    let nc = measure.len();
    if c.ncols() != nc {
        return Err(Error::Dimension {
            context: "weighted_truncated_svd (columns)",
            expected: nc,
            found: c.ncols(),
        });
    }
    if m_space.nrows() != nh || m_space.ncols() != nh {
        return Err(Error::Dimension {
            context: "weighted_truncated_svd (spatial Gram)",
            expected: nh,
            found: m_space.nrows(),
        });
    }
    if rank == 0 || rank > nh.min(nc) {
        return Err(Error::Configuration(alloc::format!(
            "rank {rank} outside 1..={}",
            nh.min(nc)
        )));
    }
    let chol = m_space
        .clone()
        .cholesky()
        .ok_or(Error::Factorization("spatial Gram matrix is not SPD"))?;
    let l = chol.l();
    let sqrt_m: Vec<f64> = measure.weights().iter().map(|m| libm::sqrt(*m)).collect();
    let mut transformed = l.transpose() * c;
    for (j, s) in sqrt_m.iter().enumerate() {
        transformed.column_mut(j).scale_mut(*s);
    }
    let svd = transformed.svd(true, true);
    let (left, right_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Factorization("singular value decomposition")),
    };
    let sigma = svd.singular_values;
    let tail: f64 = sigma.iter().skip(rank).map(|s| s * s).sum();
    let mut lead = left.columns(0, rank).into_owned();
    for j in 0..rank {
        lead.column_mut(j).scale_mut(sigma[j]);
    }
    let physical = l
        .transpose()
        .solve_upper_triangular(&lead)
        .ok_or(Error::Factorization("triangular solve"))?;
    let mut y = right_t.rows(0, rank).transpose();
    for (l, s) in sqrt_m.iter().enumerate() {
        y.row_mut(l).scale_mut(1.0 / s);
    }
    Ok(TruncatedSvd {
        physical,
        modes: StochasticModes::new_unchecked(y),
        singular_values: sigma,
        truncation_error: if tail > 0.0 { libm::sqrt(tail) } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn rejects_invalid_measures() {
        assert!(DiscreteMeasure::new(alloc::vec![0.1, 0.2], alloc::vec![0.5, 0.6]).is_err());
        assert!(DiscreteMeasure::new(alloc::vec![0.1, 0.1], alloc::vec![0.5, 0.5]).is_err());
        assert!(DiscreteMeasure::new(alloc::vec![0.1, 0.2], alloc::vec![1.5, -0.5]).is_err());
        assert!(DiscreteMeasure::new(alloc::vec![0.1], alloc::vec![0.5, 0.5]).is_err());
        assert!(DiscreteMeasure::equispaced(15).is_ok());
    }

    #[test]
    fn expectation_examples() {
        let mu = DiscreteMeasure::equispaced(15).unwrap();
        let ones = alloc::vec![1.0; 15];
        assert!((mu.expectation(&ones, &ones).unwrap() - 1.0).abs() < 1e-15);
        let mut e1 = alloc::vec![0.0; 15];
        e1[0] = 1.0;
        assert!((mu.expectation(&e1, &ones).unwrap() - 1.0 / 15.0).abs() < 1e-16);
        assert!(mu.expectation(&e1[..3], &ones).is_err());

        let mu = DiscreteMeasure::new(
            alloc::vec![0.0, 1.0, 2.0, 3.0],
            alloc::vec![0.1, 0.2, 0.3, 0.4],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut oracle = 0.0;
        for i in 0..4 {
            oracle += mu.weights()[i] * y[i] * z[i];
        }
        assert!((mu.expectation(&y, &z).unwrap() - oracle).abs() < 1e-15);
    }

    #[test]
    fn orthonormalize_examples() {
        let mu = DiscreteMeasure::equispaced(15).unwrap();
        let ones = DMatrix::from_element(15, 1, 1.0);
        let qr = weighted_orthonormalize(&ones, &mu, DEFAULT_MAX_GRAM_CONDITION).unwrap();
        assert!((qr.modes.values() - &ones).amax() < 1e-15);
        assert!((qr.triangular[(0, 0)] - 1.0).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = random_matrix(15, 3, &mut rng);
        let qr = weighted_orthonormalize(&y, &mu, DEFAULT_MAX_GRAM_CONDITION).unwrap();
        assert!(qr.modes.orthonormality_defect(&mu) < 1e-12);
        assert!((qr.modes.values() * &qr.triangular - &y).amax() < 1e-12);
        for i in 0..3 {
            assert!(qr.triangular[(i, i)] > 0.0);
            for j in 0..i {
                assert_eq!(qr.triangular[(i, j)], 0.0);
            }
        }
        // Second application is the identity.
        let again =
            weighted_orthonormalize(qr.modes.values(), &mu, DEFAULT_MAX_GRAM_CONDITION).unwrap();
        assert!((&again.triangular - DMatrix::identity(3, 3)).amax() < 1e-12);
        assert!((again.modes.values() - qr.modes.values()).amax() < 1e-12);
    }

    #[test]
    fn orthonormalize_detects_dependent_columns() {
        let mu = DiscreteMeasure::equispaced(6).unwrap();
        let mut y = DMatrix::from_fn(6, 3, |i, j| (i * (j + 1)) as f64 + 1.0);
        let c0 = y.column(0).into_owned();
        let c1 = y.column(1).into_owned();
        y.set_column(2, &(c0 * 2.0 - c1 * 0.5));
        match weighted_orthonormalize(&y, &mu, DEFAULT_MAX_GRAM_CONDITION) {
            Err(Error::RankDegeneracy { column, .. }) => assert_eq!(column, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = random_matrix(n, n, rng);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn truncated_svd_exact_ranks() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mu = DiscreteMeasure::new(
            alloc::vec![0.1, 0.4, 0.5, 0.7, 0.9],
            alloc::vec![0.1, 0.3, 0.2, 0.25, 0.15],
        )
        .unwrap();
        let m = spd(10, &mut rng);
        let g = random_matrix(10, 1, &mut rng);
        let y = random_matrix(5, 1, &mut rng);
        let c = &g * y.transpose();
        let t = weighted_truncated_svd(&c, &m, &mu, 1).unwrap();
        assert!(t.truncation_error < 1e-12);
        assert!(t.modes.orthonormality_defect(&mu) < 1e-12);
        assert!((&t.physical * t.modes.values().transpose() - &c).amax() < 1e-12);

        let c = random_matrix(10, 5, &mut rng);
        let t = weighted_truncated_svd(&c, &m, &mu, 5).unwrap();
        assert!(t.truncation_error < 1e-12);
        assert!((&t.physical * t.modes.values().transpose() - &c).amax() < 1e-11);
        assert!(weighted_truncated_svd(&c, &m, &mu, 6).is_err());
        assert!(weighted_truncated_svd(&c, &-m, &mu, 2).is_err());
    }

    /// Weighted error norm computed directly: `sqrt(Σ_l m_l e_lᵀ M e_l)`.
    fn weighted_error(e: &DMatrix<f64>, m: &DMatrix<f64>, mu: &DiscreteMeasure) -> f64 {
        let mut s = 0.0;
        for l in 0..mu.len() {
            let col = e.column(l);
            s += mu.weights()[l] * (col.transpose() * m * col)[(0, 0)];
        }
        s.sqrt()
    }

    #[test]
    fn truncated_svd_error_matches_tail_oracle_and_is_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mu = DiscreteMeasure::new(
            alloc::vec![0.1, 0.4, 0.5, 0.7, 0.9],
            alloc::vec![0.1, 0.3, 0.2, 0.25, 0.15],
        )
        .unwrap();
        let m = spd(10, &mut rng);
        let c = random_matrix(10, 5, &mut rng);
        // Oracle: dense SVD of L^T C D^{1/2} computed independently.
        let l = m.clone().cholesky().unwrap().l();
        let d = DMatrix::from_diagonal(&DVector::from_iterator(
            5,
            mu.weights().iter().map(|w| w.sqrt()),
        ));
        let sv = (l.transpose() * &c * d).singular_values();
        let mut sorted: Vec<f64> = sv.iter().copied().collect();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let oracle: f64 = sorted[2..].iter().map(|s| s * s).sum::<f64>().sqrt();
        let t = weighted_truncated_svd(&c, &m, &mu, 2).unwrap();
        assert!((t.truncation_error - oracle).abs() < 1e-12);
        let direct = weighted_error(&(&c - &t.physical * t.modes.values().transpose()), &m, &mu);
        assert!((direct - oracle).abs() < 1e-12);
        // No random rank-2 competitor does better.
        for _ in 0..50 {
            let a = random_matrix(10, 2, &mut rng);
            let b = random_matrix(5, 2, &mut rng);
            let e = weighted_error(&(&c - a * b.transpose()), &m, &mu);
            assert!(e >= oracle - 1e-12);
        }
        let mut last = f64::INFINITY;
        for r in 1..=5 {
            let e = weighted_truncated_svd(&c, &m, &mu, r)
                .unwrap()
                .truncation_error;
            assert!(e <= last + 1e-14);
            last = e;
        }
    }
}
