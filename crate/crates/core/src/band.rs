//! Compressed banded matrices.
//!
//! Every matrix produced by the 1D element assembly couples a degree of
//! freedom only with its neighbours inside the element patch, so a dense band
//! of `kl` sub- and `ku` super-diagonals is the natural storage. The same type
//! holds the interleaved block systems of the physical-mode update.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Square banded matrix in row-major band storage.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self {
            n,
            kl,
            ku,
            data: vec![0.0; n * (kl + ku + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower_bandwidth(&self) -> usize {
        self.kl
    }

    pub fn upper_bandwidth(&self) -> usize {
        self.ku
    }

    #[inline]
    fn width(&self) -> usize {
        self.kl + self.ku + 1
    }

    #[inline]
    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && j + self.kl >= i && j <= i + self.ku
    }

    /// Column range stored for row `i`.
    #[inline]
    pub fn row_range(&self, i: usize) -> core::ops::Range<usize> {
        let lo = i.saturating_sub(self.kl);
        let hi = (i + self.ku + 1).min(self.n);
        lo..hi
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        i * self.width() + (j + self.kl - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.offset(i, j)]
        } else {
            0.0
        }
    }

    /// Adds `value` at `(i, j)`.
    ///
    /// Panics if the position lies outside the band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band");
        let o = self.offset(i, j);
        self.data[o] += value;
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band");
        let o = self.offset(i, j);
        self.data[o] = value;
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// `self += factor * other`; `other` must fit inside this band.
    pub fn axpy(&mut self, factor: f64, other: &BandMatrix) {
        assert_eq!(self.n, other.n);
        assert!(other.kl <= self.kl && other.ku <= self.ku);
        if other.kl == self.kl && other.ku == self.ku {
            for (a, b) in self.data.iter_mut().zip(&other.data) {
                *a += factor * b;
            }
            return;
        }
        for i in 0..self.n {
            for j in other.row_range(i) {
                let v = other.data[other.offset(i, j)];
                let o = self.offset(i, j);
                self.data[o] += factor * v;
            }
        }
    }

    /// Linear combination `Σ c_i A_i` of matrices sharing one band shape.
    pub fn combination(terms: &[(f64, &BandMatrix)]) -> Self {
        let first = terms.first().expect("at least one term").1;
        let kl = terms.iter().map(|t| t.1.kl).max().unwrap_or(0);
        let ku = terms.iter().map(|t| t.1.ku).max().unwrap_or(0);
        let mut out = BandMatrix::zeros(first.n, kl, ku);
        for (c, m) in terms {
            out.axpy(*c, m);
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut out = BandMatrix::zeros(self.n, self.ku, self.kl);
        for i in 0..self.n {
            for j in self.row_range(i) {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for j in self.row_range(i) {
                s += self.data[self.offset(i, j)] * x[j];
            }
            *yi = s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        let mut s = 0.0;
        for (i, xi) in x.iter().enumerate() {
            if *xi == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for j in self.row_range(i) {
                row += self.data[self.offset(i, j)] * y[j];
            }
            s += xi * row;
        }
        s
    }

    /// `A X` for a dense matrix with `n` rows.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.n);
        let mut out = DMatrix::zeros(self.n, x.ncols());
        for c in 0..x.ncols() {
            let col = x.column(c);
            for i in 0..self.n {
                let mut s = 0.0;
                for j in self.row_range(i) {
                    s += self.data[self.offset(i, j)] * col[j];
                }
                out[(i, c)] = s;
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// LU factorisation with partial pivoting.
    pub fn lu(&self) -> Result<BandLu> {
        BandLu::factor(self)
    }
}

/// Banded LU factors with row interchanges applied step by step.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandLu {
    fn factor(a: &BandMatrix) -> Result<Self> {
        let n = a.n;
        let kl = a.kl;
        // Row swaps can push fill up to kl extra super-diagonals.
        let ku = a.ku + a.kl;
        let width = kl + ku + 1;
        let mut data = vec![0.0; n * width];
        for i in 0..n {
            for j in a.row_range(i) {
                data[i * width + (j + kl - i)] = a.get(i, j);
            }
        }
        let idx = |r: usize, c: usize| r * width + (c + kl - r);
        let mut pivots = vec![0; n];
        let scale = a.max_abs();
        if scale == 0.0 && n > 0 {
            return Err(Error::SingularSystem("zero matrix"));
        }
        for i in 0..n {
            let last_row = (i + kl).min(n - 1);
            let last_col = (i + ku).min(n - 1);
            let mut p = i;
            let mut best = data[idx(i, i)].abs();
            for r in i + 1..=last_row {
                let v = data[idx(r, i)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if !(best > scale * 1e-300) || !best.is_finite() {
                return Err(Error::SingularSystem("zero pivot in banded LU"));
            }
            pivots[i] = p;
            if p != i {
                for c in i..=last_col {
                    data.swap(idx(i, c), idx(p, c));
                }
            }
            let pivot = data[idx(i, i)];
            for r in i + 1..=last_row {
                let l = data[idx(r, i)] / pivot;
                data[idx(r, i)] = l;
                if l != 0.0 {
                    for c in i + 1..=last_col {
                        data[idx(r, c)] -= l * data[idx(i, c)];
                    }
                }
            }
        }
        Ok(Self {
            n,
            kl,
            ku,
            data,
            pivots,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let width = self.kl + self.ku + 1;
        let idx = |r: usize, c: usize| r * width + (c + self.kl - r);
        for i in 0..n {
            let p = self.pivots[i];
            if p != i {
                b.swap(i, p);
            }
            let bi = b[i];
            if bi != 0.0 {
                for r in i + 1..=(i + self.kl).min(n.saturating_sub(1)) {
                    b[r] -= self.data[idx(r, i)] * bi;
                }
            }
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for c in i + 1..=(i + self.ku).min(n - 1) {
                s -= self.data[idx(i, c)] * b[c];
            }
            b[i] = s / self.data[idx(i, i)];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Solves column by column.
    pub fn solve_dense(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = b.clone();
        for c in 0..b.ncols() {
            let mut col: Vec<f64> = b.column(c).iter().copied().collect();
            self.solve_in_place(&mut col);
            out.column_mut(c).copy_from_slice(&col);
        }
        out
    }
}

/// `‖A x − b‖ / (‖A‖_max ‖x‖ + ‖b‖)`, all in the max norm.
pub fn relative_residual(a: &BandMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.mul_vec(x);
    let r = ax
        .iter()
        .zip(b)
        .fold(0.0_f64, |m, (u, v)| m.max((u - v).abs()));
    let xn = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let bn = b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let scale = a.max_abs() * xn * (a.kl + a.ku + 1) as f64 + bn;
    if scale == 0.0 {
        0.0
    } else {
        r / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_band(n: usize, kl: usize, ku: usize, rng: &mut ChaCha8Rng) -> BandMatrix {
        let mut a = BandMatrix::zeros(n, kl, ku);
        for i in 0..n {
            for j in a.row_range(i) {
                a.set(i, j, rng.gen_range(-1.0..1.0));
            }
        }
        a
    }

    #[test]
    fn lu_matches_dense_solve_with_pivoting() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(n, kl, ku) in &[(1, 0, 0), (5, 1, 1), (12, 2, 3), (30, 5, 2), (40, 11, 11)] {
            let a = random_band(n, kl, ku, &mut rng);
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = a.lu().unwrap().solve(&b);
            let dense = a
                .to_dense()
                .lu()
                .solve(&nalgebra::DVector::from_vec(b.clone()))
                .unwrap();
            for i in 0..n {
                assert!(
                    (x[i] - dense[i]).abs() < 1e-9 * (1.0 + dense[i].abs()),
                    "n={n}"
                );
            }
            assert!(relative_residual(&a, &x, &b) < 1e-13);
        }
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        let mut a = BandMatrix::zeros(3, 1, 1);
        a.set(0, 1, 1.0);
        a.set(1, 0, 1.0);
        a.set(1, 2, 2.0);
        a.set(2, 1, 3.0);
        a.set(2, 2, 1.0);
        let x = a.lu().unwrap().solve(&[1.0, 2.0, 3.0]);
        let r = relative_residual(&a, &x, &[1.0, 2.0, 3.0]);
        assert!(r < 1e-15, "{r}");
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = BandMatrix::zeros(4, 1, 1);
        assert!(a.lu().is_err());
    }

    #[test]
    fn transpose_and_bilinear_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_band(9, 2, 1, &mut rng);
        let x: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lhs = a.bilinear(&x, &y);
        let rhs = a.transpose().bilinear(&y, &x);
        assert!((lhs - rhs).abs() < 1e-14);
    }
}
